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


#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "oracle.hpp"

namespace {

using datatk::DampingVector;
using datatk::ErrorKind;
using datatk::GradientStore;

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const datatk::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no datatk::Error thrown";
  return ErrorKind::InvalidArgument;
}

oracle::Vec vec(const Eigen::VectorXd& v) { return oracle::to_vec(v); }

}  // namespace

TEST(MethodNameTest, ParseRoundTrips) {
  for (auto m : {datatk::Method::HessianFree, datatk::Method::DataInf, datatk::Method::Exact,
                 datatk::Method::LiSSA, datatk::Method::EKFAC}) {
    const auto parsed = datatk::parse_method(datatk::method_name(m));
    ASSERT_TRUE(parsed.has_value()) << datatk::method_name(m);
    EXPECT_EQ(*parsed, m);
  }
  EXPECT_FALSE(datatk::parse_method("influence").has_value());
}

TEST(HessianFreeTest, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto store = oracle::random_store(seed, oracle::random_shape(seed, 3, 8, 20));
    const auto q = datatk::validation_aggregate(store);
    EXPECT_LT(oracle::rel_error(vec(datatk::hessian_free_scores(store, q)),
                                oracle::hessian_free_scores(store, q)),
              1e-13);
  }
}

TEST(DataInfTest, MatchesClosedFormAndDenseOracles) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto store = oracle::random_store(seed, oracle::random_shape(seed, 3, 8, 25));
    const auto q = datatk::validation_aggregate(store);
    const auto damping = datatk::compute_damping(store, 0.1);
    const auto got = vec(datatk::datainf_scores(store, q, damping));
    EXPECT_LT(oracle::rel_error(got, oracle::closed_form_scores(store, q, damping)), 1e-10);
    EXPECT_LT(oracle::rel_error(got, oracle::mean_of_inverses_scores(store, q, damping)), 1e-9);
  }
}

TEST(DataInfTest, WorkerCountDoesNotChangeScoresBeyondRounding) {
  const auto store = oracle::random_store(3, {.n_train = 257, .n_query = 2, .dims = {9, 5}});
  const auto q = datatk::validation_aggregate(store);
  const auto damping = datatk::compute_damping(store);
  const auto one = vec(datatk::datainf_scores(store, q, damping, {1}));
  for (int w : {2, 3, 4}) {
    EXPECT_LT(oracle::rel_error(vec(datatk::datainf_scores(store, q, damping, {w})), one), 1e-12);
  }
  EXPECT_EQ(vec(datatk::datainf_scores(store, q, damping, {1})), one);
}

TEST(DataInfTest, IhvpIsTheMeanOfRankOneInverses) {
  const auto store = oracle::random_store(8, {.n_train = 6, .n_query = 1, .dims = {3}});
  const Eigen::VectorXd v = store.query(0).row(0).transpose();
  const double lambda = 0.7;
  oracle::Mat avg = oracle::zeros(3, 3);
  for (Eigen::Index i = 0; i < 6; ++i) {
    oracle::Mat s = oracle::zeros(3, 3);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) s[a][b] = store.train(0)(i, a) * store.train(0)(i, b);
      s[a][a] += lambda;
    }
    const auto inv = oracle::inverse(s);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) avg[a][b] += inv[a][b] / 6.0;
    }
  }
  EXPECT_LT(oracle::rel_error(vec(datatk::datainf_ihvp(store.train(0), v, lambda)),
                              oracle::matvec(avg, vec(v))),
            1e-12);
}

TEST(ExactTest, AllSolversMatchDenseInverse) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto store = oracle::random_store(seed, oracle::random_shape(seed, 3, 16, 30));
    const auto q = datatk::validation_aggregate(store);
    const auto damping = datatk::compute_damping(store, 0.1);
    const auto want = oracle::exact_scores(store, q, damping);
    for (auto solver :
         {datatk::ExactSolver::Auto, datatk::ExactSolver::Primal, datatk::ExactSolver::Dual}) {
      const auto got = vec(datatk::exact_scores(store, q, damping, {.solver = solver}));
      EXPECT_LT(oracle::rel_error(got, want), 1e-9) << "seed " << seed;
    }
  }
}

TEST(ExactTest, FactorizationIsReusedAcrossQueries) {
  const auto store = oracle::random_store(4, {.n_train = 12, .n_query = 4, .dims = {5, 3}});
  const auto damping = datatk::compute_damping(store);
  const datatk::ExactInfluence exact(store, damping);
  for (std::size_t j = 0; j < store.n_query(); ++j) {
    const auto q = datatk::query_row(store, j);
    EXPECT_LT(oracle::rel_error(vec(exact.scores(q)), oracle::exact_scores(store, q, damping)),
              1e-10);
  }
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(5);
  const auto r = exact.ihvp(0, v);
  const auto dense = oracle::damped_gram(store.train(0), damping.lambda[0]);
  EXPECT_LT(oracle::rel_error(oracle::matvec(dense, vec(r)), vec(v)), 1e-12);
}

TEST(ExactTest, DimensionCapNamesTheLayer) {
  const auto store = oracle::random_store(1, {.n_train = 5, .n_query = 1, .dims = {3, 12}});
  const auto damping = datatk::compute_damping(store);
  try {
    datatk::ExactInfluence(store, damping, {.dimension_cap = 10});
    FAIL();
  } catch (const datatk::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionCapExceeded);
    EXPECT_NE(e.message().find("layer1"), std::string::npos) << e.message();
    EXPECT_NE(e.message().find("10"), std::string::npos) << e.message();
  }
  EXPECT_NO_THROW(datatk::ExactInfluence(store, damping, {.dimension_cap = 12}));
}

TEST(DampingCheckTest, RejectsBadDamping) {
  const auto store = oracle::random_store(2, {.n_train = 5, .n_query = 1, .dims = {3, 2}});
  const auto q = datatk::validation_aggregate(store);
  const DampingVector zero{{0.1, 0.0}};
  const DampingVector nan{{std::nan(""), 0.1}};
  const DampingVector short_vec{{0.1}};
  for (const auto* d : {&zero, &nan}) {
    EXPECT_EQ(kind_of([&] { datatk::datainf_scores(store, q, *d); }),
              ErrorKind::NonPositiveDamping);
    EXPECT_EQ(kind_of([&] { datatk::exact_scores(store, q, *d); }),
              ErrorKind::NonPositiveDamping);
    EXPECT_EQ(kind_of([&] { datatk::lissa_scores(store, q, *d); }),
              ErrorKind::NonPositiveDamping);
  }
  EXPECT_EQ(kind_of([&] { datatk::check_damping(store, short_vec); }), ErrorKind::ShapeMismatch);
  datatk::ValidationAggregate bad_q{{q.v[0]}};
  EXPECT_EQ(kind_of([&] { datatk::datainf_scores(store, bad_q, datatk::compute_damping(store)); }),
            ErrorKind::ShapeMismatch);
}

TEST(LissaTest, ConvergesToExactWithMonotoneResiduals) {
  const auto store = oracle::random_store(6, {.n_train = 60, .n_query = 1, .dims = {6}});
  const auto damping = datatk::compute_damping(store);
  const Eigen::VectorXd v = store.query(0).row(0).transpose();
  const auto trace = datatk::lissa_solve(store.train(0), v, damping.lambda[0],
                                         {.iterations = 800}, {}, true);
  ASSERT_EQ(trace.residuals.size(), 801u);
  // Non-increasing down to the rounding floor.
  const double floor = 1e-12 * v.norm();
  for (std::size_t j = 1; j < trace.residuals.size(); ++j) {
    EXPECT_LE(trace.residuals[j], trace.residuals[j - 1] * (1.0 + 1e-12) + floor);
  }
  const auto inv = oracle::inverse(oracle::damped_gram(store.train(0), damping.lambda[0]));
  EXPECT_LT(oracle::rel_error(vec(trace.estimate), oracle::matvec(inv, vec(v))), 1e-6);
}

TEST(LissaTest, DivergenceIsReportedPerLayer) {
  const auto store = oracle::random_store(6, {.n_train = 40, .n_query = 1, .dims = {4, 4}});
  const auto q = datatk::validation_aggregate(store);
  const auto damping = datatk::compute_damping(store);
  try {
    datatk::lissa_scores(store, q, damping, {.iterations = 200, .scaling = 10.0});
    FAIL();
  } catch (const datatk::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Divergence);
    EXPECT_EQ(e.category(), datatk::ErrorCategory::Numeric);
    EXPECT_NE(e.message().find("layer=0"), std::string::npos) << e.message();
    EXPECT_NE(e.message().find("layer=1"), std::string::npos) << e.message();
  }
  EXPECT_EQ(kind_of([&] { datatk::lissa_scores(store, q, damping, {.iterations = 0}); }),
            ErrorKind::InvalidArgument);
}

TEST(ComputeScoresTest, DispatchesAndStacksQueries) {
  const auto store = oracle::random_store(12, {.n_train = 15, .n_query = 3, .dims = {4, 3}});
  const auto damping = datatk::compute_damping(store);
  std::vector<datatk::ValidationAggregate> queries;
  for (std::size_t j = 0; j < 3; ++j) queries.push_back(datatk::query_row(store, j));

  for (auto m : {datatk::Method::HessianFree, datatk::Method::DataInf, datatk::Method::Exact,
                 datatk::Method::LiSSA}) {
    datatk::ScoreRequest req{.method = m};
    const auto out = datatk::compute_scores(store, nullptr, queries, damping, req);
    EXPECT_EQ(out.method, m);
    ASSERT_EQ(out.scores.rows(), 3);
    ASSERT_EQ(out.scores.cols(), 15);
    for (std::size_t j = 0; j < 3; ++j) {
      Eigen::VectorXd want;
      switch (m) {
        case datatk::Method::HessianFree:
          want = datatk::hessian_free_scores(store, queries[j]);
          break;
        case datatk::Method::DataInf:
          want = datatk::datainf_scores(store, queries[j], damping);
          break;
        case datatk::Method::Exact:
          want = datatk::exact_scores(store, queries[j], damping);
          break;
        default:
          want = datatk::lissa_scores(store, queries[j], damping);
      }
      EXPECT_EQ(Eigen::VectorXd(out.scores.row(static_cast<Eigen::Index>(j)).transpose()), want);
    }
  }
  EXPECT_EQ(kind_of([&] {
              datatk::compute_scores(store, nullptr, queries, damping,
                                     {.method = datatk::Method::EKFAC});
            }),
            ErrorKind::MissingFactoredSection);
  EXPECT_EQ(kind_of([&] {
              datatk::compute_scores(store, nullptr, queries, damping,
                                     {.method = datatk::Method::Retraining});
            }),
            ErrorKind::InvalidArgument);
}
