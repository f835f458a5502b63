// Copyright 2026 The datatk Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "factored.hpp"
#include "oracle.hpp"

namespace {

oracle::Vec vec(const Eigen::VectorXd& v) { return oracle::to_vec(v); }

}  // namespace

TEST(EkfacTest, SingleExampleMatchesExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [store, f] = oracle::make_factored(seed, 1, {{3, 2}, {2, 4}});
    const auto damping = datatk::DampingVector::uniform(2, 0.3);
    const auto q = datatk::validation_aggregate(store);
    EXPECT_LT(oracle::rel_error(vec(datatk::ekfac_scores(store, &f, q, damping)),
                                oracle::exact_scores(store, q, damping)),
              1e-6);
  }
}

TEST(EkfacTest, ConstantActivationMatchesExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [store, f] = oracle::make_factored(seed, 12, {{3, 3}, {2, 5}}, true);
    const auto damping = datatk::compute_damping(store);
    const auto q = datatk::validation_aggregate(store);
    EXPECT_LT(oracle::rel_error(vec(datatk::ekfac_scores(store, &f, q, damping)),
                                oracle::exact_scores(store, q, damping)),
              1e-6);
  }
}

TEST(EkfacTest, CorrectedDiagonalMatchesKroneckerOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [store, f] = oracle::make_factored(seed, 9, {{2, 2}});
    const auto damping = datatk::compute_damping(store);
    const datatk::EkfacInfluence ek(store, &f, damping);

    const oracle::Mat k =
        oracle::kron(oracle::from_eigen(ek.activation_basis(0)), oracle::from_eigen(ek.preact_basis(0)));
    const oracle::Mat kt = oracle::transpose(k);
    oracle::Vec want(4, 0.0);
    for (Eigen::Index j = 0; j < 9; ++j) {
      const oracle::Vec rotated = oracle::matvec(kt, oracle::row(store.train(0), j));
      for (std::size_t i = 0; i < 4; ++i) want[i] += rotated[i] * rotated[i] / 9.0;
    }
    EXPECT_LT(oracle::rel_error(vec(ek.corrected_diagonal(0)), want), 1e-10);
  }
}

TEST(EkfacTest, BasesDiagonalizeTheFactorCovariances) {
  const auto [store, f] = oracle::make_factored(3, 20, {{4, 3}});
  const datatk::EkfacInfluence ek(store, &f, datatk::compute_damping(store));
  const Eigen::MatrixXd a = f.activations[0].transpose() * f.activations[0] / 20.0;
  const Eigen::MatrixXd qa = ek.activation_basis(0);
  Eigen::MatrixXd rotated = qa.transpose() * a * qa;
  EXPECT_LT((qa.transpose() * qa - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-12);
  rotated.diagonal().setZero();
  EXPECT_LT(rotated.norm(), 1e-12);
}

TEST(EkfacTest, RequiresConsistentFactors) {
  auto [store, f] = oracle::make_factored(2, 5, {{2, 2}});
  const auto damping = datatk::compute_damping(store);
  try {
    datatk::EkfacInfluence(store, nullptr, damping);
    FAIL();
  } catch (const datatk::Error& e) {
    EXPECT_EQ(e.kind(), datatk::ErrorKind::MissingFactoredSection);
  }
  f.preact_grads[0](1, 1) *= 2.0;
  try {
    datatk::EkfacInfluence(store, &f, damping);
    FAIL();
  } catch (const datatk::Error& e) {
    EXPECT_EQ(e.kind(), datatk::ErrorKind::FactorReconstructionMismatch);
  }
}
