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

#include "datatk/grad_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "datatk/error.hpp"

namespace datatk {
namespace {

std::string where(std::size_t layer, const std::string& name) {
  std::ostringstream os;
  os << "layer=" << layer << " (" << name << ")";
  return os.str();
}

void check_finite(const RowMatrix& m, std::size_t layer, const std::string& name,
                  const char* block) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) {
        std::ostringstream os;
        os << where(layer, name) << " block=" << block << " row=" << i << " col=" << j;
        throw Error(ErrorKind::NonFiniteValue, os.str());
      }
    }
  }
}

void check_shape(const RowMatrix& m, std::size_t rows, std::size_t cols, std::size_t layer,
                 const std::string& name, const char* block) {
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
    std::ostringstream os;
    os << where(layer, name) << " block=" << block << " expected " << rows << "x" << cols
       << ", got " << m.rows() << "x" << m.cols();
    throw Error(ErrorKind::ShapeMismatch, os.str());
  }
}

}  // namespace

GradientStore::GradientStore(std::vector<LayerSpec> layers, std::vector<RowMatrix> train,
                             std::vector<RowMatrix> query)
    : layers_(std::move(layers)), train_(std::move(train)), query_(std::move(query)) {
  if (layers_.empty()) throw Error(ErrorKind::ShapeMismatch, "store has no layers");
  if (train_.size() != layers_.size() || query_.size() != layers_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "block count does not match layer count");
  }
  std::set<std::string> names;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!names.insert(layers_[l].name).second) {
      throw Error(ErrorKind::DuplicateLayerName, "duplicate layer name '" + layers_[l].name + "'");
    }
    if (layers_[l].dim == 0) {
      throw Error(ErrorKind::ShapeMismatch, where(l, layers_[l].name) + " has dim 0");
    }
  }
  n_train_ = static_cast<std::size_t>(train_[0].rows());
  n_query_ = static_cast<std::size_t>(query_[0].rows());
  if (n_train_ == 0) throw Error(ErrorKind::ShapeMismatch, "n_train must be positive");
  if (n_query_ == 0) throw Error(ErrorKind::ShapeMismatch, "n_query must be positive");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    check_shape(train_[l], n_train_, layers_[l].dim, l, layers_[l].name, "train");
    check_shape(query_[l], n_query_, layers_[l].dim, l, layers_[l].name, "query");
    check_finite(train_[l], l, layers_[l].name, "train");
    check_finite(query_[l], l, layers_[l].name, "query");
  }
}

std::size_t GradientStore::max_dim() const noexcept {
  std::size_t d = 0;
  for (const auto& spec : layers_) d = std::max(d, spec.dim);
  return d;
}

std::size_t GradientStore::total_dim() const noexcept {
  std::size_t d = 0;
  for (const auto& spec : layers_) d += spec.dim;
  return d;
}

bool GradientStore::operator==(const GradientStore& other) const {
  if (layers_ != other.layers_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (train_[l] != other.train_[l] || query_[l] != other.query_[l]) return false;
  }
  return true;
}

bool FactoredGradients::operator==(const FactoredGradients& other) const {
  if (dims != other.dims || activations.size() != other.activations.size() ||
      preact_grads.size() != other.preact_grads.size()) {
    return false;
  }
  for (std::size_t l = 0; l < activations.size(); ++l) {
    if (activations[l] != other.activations[l] || preact_grads[l] != other.preact_grads[l]) {
      return false;
    }
  }
  return true;
}

void validate_factors(const GradientStore& store, const FactoredGradients& factored,
                      double tolerance) {
  const std::size_t num_layers = store.num_layers();
  if (factored.dims.size() != num_layers || factored.activations.size() != num_layers ||
      factored.preact_grads.size() != num_layers) {
    throw Error(ErrorKind::ShapeMismatch, "factored section does not cover every layer");
  }
  const std::size_t n = store.n_train();
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& spec = store.layer(l);
    const auto [a, b] = factored.dims[l];
    if (a == 0 || b == 0 || a * b != spec.dim) {
      std::ostringstream os;
      os << where(l, spec.name) << " factor dims " << a << "x" << b << " do not multiply to dim "
         << spec.dim;
      throw Error(ErrorKind::ShapeMismatch, os.str());
    }
    check_shape(factored.activations[l], n, a, l, spec.name, "activations");
    check_shape(factored.preact_grads[l], n, b, l, spec.name, "preact_grads");
    check_finite(factored.activations[l], l, spec.name, "activations");
    check_finite(factored.preact_grads[l], l, spec.name, "preact_grads");

    const RowMatrix& grads = store.train(l);
    for (std::size_t i = 0; i < n; ++i) {
      double diff2 = 0.0;
      double ref2 = 0.0;
      double prod2 = 0.0;
      for (std::size_t p = 0; p < a; ++p) {
        const double h = factored.activations[l](i, p);
        for (std::size_t q = 0; q < b; ++q) {
          const double kron = h * factored.preact_grads[l](i, q);
          const double g = grads(i, p * b + q);
          diff2 += (kron - g) * (kron - g);
          ref2 += g * g;
          prod2 += kron * kron;
        }
      }
      if (std::sqrt(diff2) > tolerance * std::sqrt(std::max(ref2, prod2))) {
        std::ostringstream os;
        os << where(l, spec.name) << " row=" << i << " relative error "
           << std::sqrt(diff2 / std::max(ref2, prod2)) << " exceeds " << tolerance;
        throw Error(ErrorKind::FactorReconstructionMismatch, os.str());
      }
    }
  }
}

DampingVector DampingVector::uniform(std::size_t num_layers, double value) {
  return DampingVector{std::vector<double>(num_layers, value)};
}

DampingVector compute_damping(const GradientStore& store, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::InvalidArgument, "damping scale must be positive");
  }
  DampingVector out;
  out.lambda.reserve(store.num_layers());
  const double n = static_cast<double>(store.n_train());
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    const double sum_sq = store.train(l).squaredNorm();
    const double lambda = scale * sum_sq / (n * static_cast<double>(store.layer(l).dim));
    if (!(lambda > 0.0)) {
      throw Error(ErrorKind::AllZeroGradients,
                  where(l, store.layer(l).name) + " has only zero training gradients");
    }
    out.lambda.push_back(lambda);
  }
  return out;
}

ValidationAggregate validation_aggregate(const GradientStore& store,
                                         std::optional<std::span<const std::size_t>> subset) {
  ValidationAggregate out;
  out.v.reserve(store.num_layers());
  if (!subset) {
    for (std::size_t l = 0; l < store.num_layers(); ++l) {
      Vector v = Vector::Zero(static_cast<Eigen::Index>(store.layer(l).dim));
      for (std::size_t j = 0; j < store.n_query(); ++j) v += store.query(l).row(j).transpose();
      out.v.push_back(v / static_cast<double>(store.n_query()));
    }
    return out;
  }
  if (subset->empty()) throw Error(ErrorKind::EmptySubset, "query subset is empty");
  for (std::size_t j : *subset) {
    if (j >= store.n_query()) {
      throw Error(ErrorKind::IndexOutOfRange,
                  "query index " + std::to_string(j) + " >= n_query " +
                      std::to_string(store.n_query()));
    }
  }
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(store.layer(l).dim));
    for (std::size_t j : *subset) v += store.query(l).row(j).transpose();
    out.v.push_back(v / static_cast<double>(subset->size()));
  }
  return out;
}

ValidationAggregate query_row(const GradientStore& store, std::size_t j) {
  const std::size_t idx[1] = {j};
  return validation_aggregate(store, std::span<const std::size_t>(idx));
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

using nlohmann::ordered_json;

constexpr std::uint32_t kMaxHeaderBytes = 64u << 20;

void put_u32_le(std::ostream& os, std::uint32_t value) {
  unsigned char bytes[4];
  for (int k = 0; k < 4; ++k) bytes[k] = static_cast<unsigned char>((value >> (8 * k)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32_le(const unsigned char* bytes) {
  std::uint32_t value = 0;
  for (int k = 0; k < 4; ++k) value |= static_cast<std::uint32_t>(bytes[k]) << (8 * k);
  return value;
}

void write_block(std::ostream& os, const RowMatrix& m, std::size_t layer,
                 const std::string& name, const char* block) {
  std::vector<char> buffer(static_cast<std::size_t>(m.size()) * 4);
  std::size_t offset = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto f = static_cast<float>(m(i, j));
      if (!std::isfinite(f)) {
        std::ostringstream msg;
        msg << where(layer, name) << " block=" << block << " row=" << i
            << " overflows float32";
        throw Error(ErrorKind::NonFiniteValue, msg.str());
      }
      auto bits = std::bit_cast<std::uint32_t>(f);
      for (int k = 0; k < 4; ++k) {
        buffer[offset++] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
      }
    }
  }
  os.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
}

RowMatrix read_block(std::istream& is, std::size_t rows, std::size_t cols, std::size_t layer,
                     const std::string& name, const char* block) {
  std::vector<unsigned char> buffer(rows * cols * 4);
  is.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (static_cast<std::size_t>(is.gcount()) != buffer.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                where(layer, name) + " block=" + block + " truncated");
  }
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const float f = std::bit_cast<float>(get_u32_le(buffer.data() + offset));
      offset += 4;
      if (!std::isfinite(f)) {
        std::ostringstream os;
        os << where(layer, name) << " block=" << block << " row=" << i << " col=" << j;
        throw Error(ErrorKind::NonFiniteValue, os.str());
      }
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
    }
  }
  return m;
}

std::size_t get_size(const ordered_json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw Error(ErrorKind::ShapeMismatch, std::string("header field '") + key +
                                              "' missing or not a non-negative integer");
  }
  return j[key].get<std::size_t>();
}

DumpHeader parse_header(std::istream& is, const std::filesystem::path& path) {
  char magic[8] = {};
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kDumpMagic, 8) != 0) {
    throw Error(ErrorKind::BadMagic, path.string() + " does not start with DINFGRD1");
  }
  unsigned char len_bytes[4];
  is.read(reinterpret_cast<char*>(len_bytes), 4);
  if (is.gcount() != 4) throw Error(ErrorKind::ShapeMismatch, "truncated header length");
  const std::uint32_t header_len = get_u32_le(len_bytes);
  if (header_len > kMaxHeaderBytes) {
    throw Error(ErrorKind::ShapeMismatch,
                "header length " + std::to_string(header_len) + " is implausibly large");
  }
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  if (static_cast<std::uint32_t>(is.gcount()) != header_len) {
    throw Error(ErrorKind::ShapeMismatch, "truncated JSON header");
  }
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ShapeMismatch, std::string("malformed JSON header: ") + e.what());
  }
  DumpHeader h;
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    throw Error(ErrorKind::UnsupportedVersion, "header has no integer version");
  }
  h.version = j["version"].get<int>();
  if (h.version != kDumpVersion) {
    throw Error(ErrorKind::UnsupportedVersion,
                "version " + std::to_string(h.version) + " (supported: 1)");
  }
  h.n_train = get_size(j, "n_train");
  h.n_query = get_size(j, "n_query");
  if (!j.contains("layers") || !j["layers"].is_array()) {
    throw Error(ErrorKind::ShapeMismatch, "header field 'layers' missing");
  }
  for (const auto& layer : j["layers"]) {
    if (!layer.contains("name") || !layer["name"].is_string()) {
      throw Error(ErrorKind::ShapeMismatch, "layer entry without name");
    }
    h.layers.push_back({layer["name"].get<std::string>(), get_size(layer, "dim")});
  }
  h.factored = j.value("factored", false);
  if (h.factored) {
    if (!j.contains("factor_dims") || !j["factor_dims"].is_array() ||
        j["factor_dims"].size() != h.layers.size()) {
      throw Error(ErrorKind::ShapeMismatch, "factor_dims must list one pair per layer");
    }
    for (const auto& pair : j["factor_dims"]) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
          !pair[1].is_number_unsigned()) {
        throw Error(ErrorKind::ShapeMismatch, "factor_dims entries must be [a, b] pairs");
      }
      h.factor_dims.push_back({pair[0].get<std::size_t>(), pair[1].get<std::size_t>()});
    }
  }
  return h;
}

}  // namespace

DumpHeader read_dump_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return parse_header(is, path);
}

Dump load_dump(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  const DumpHeader h = parse_header(is, path);

  std::vector<RowMatrix> train, query;
  FactoredGradients factored;
  factored.dims = h.factor_dims;
  for (std::size_t l = 0; l < h.layers.size(); ++l) {
    const auto& spec = h.layers[l];
    if (spec.dim == 0) throw Error(ErrorKind::ShapeMismatch, where(l, spec.name) + " has dim 0");
    train.push_back(read_block(is, h.n_train, spec.dim, l, spec.name, "train"));
    query.push_back(read_block(is, h.n_query, spec.dim, l, spec.name, "query"));
    if (h.factored) {
      const auto [a, b] = h.factor_dims[l];
      if (a * b != spec.dim) {
        throw Error(ErrorKind::ShapeMismatch,
                    where(l, spec.name) + " factor dims do not multiply to dim");
      }
      factored.activations.push_back(read_block(is, h.n_train, a, l, spec.name, "activations"));
      factored.preact_grads.push_back(read_block(is, h.n_train, b, l, spec.name, "preact_grads"));
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw Error(ErrorKind::ShapeMismatch, "trailing bytes after last block");
  }

  Dump dump{GradientStore(h.layers, std::move(train), std::move(query)), std::nullopt};
  if (h.factored) {
    validate_factors(dump.store, factored);
    dump.factored = std::move(factored);
  }
  return dump;
}

void save_dump(const GradientStore& store, const FactoredGradients* factored,
               const std::filesystem::path& path) {
  if (factored != nullptr) validate_factors(store, *factored);

  ordered_json j;
  j["version"] = kDumpVersion;
  j["n_train"] = store.n_train();
  j["n_query"] = store.n_query();
  j["layers"] = ordered_json::array();
  for (const auto& spec : store.layers()) {
    j["layers"].push_back(ordered_json{{"name", spec.name}, {"dim", spec.dim}});
  }
  j["factored"] = factored != nullptr;
  j["factor_dims"] = ordered_json::array();
  if (factored != nullptr) {
    for (const auto& fd : factored->dims) {
      j["factor_dims"].push_back(ordered_json::array({fd.activations, fd.preact_grads}));
    }
  }
  const std::string header = j.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  os.write(kDumpMagic, 8);
  put_u32_le(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    const auto& name = store.layer(l).name;
    write_block(os, store.train(l), l, name, "train");
    write_block(os, store.query(l), l, name, "query");
    if (factored != nullptr) {
      write_block(os, factored->activations[l], l, name, "activations");
      write_block(os, factored->preact_grads[l], l, name, "preact_grads");
    }
  }
  os.flush();
  if (!os) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace datatk
