#pragma once

#include "omec/common.hpp"
#include "omec/dynamics.hpp"
#include "omec/observation_operator.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace omec {

// ---------------------------------------------------------------------------
// Observation functions

enum class ObservationKind { kIdentity, kComponentwise, kLinear, kCustom };

const char* to_string(ObservationKind kind);

enum class ElementaryMap { kIdentity, kSin, kCos, kShift };

// One output component of a componentwise map: out_i = map(x_i) (+ offset
// for kShift).
struct ComponentMap {
  ElementaryMap map = ElementaryMap::kIdentity;
  double offset = 0.0;

  double operator()(double x) const;
  std::string describe() const;
};

class ObservationFunction : public ObservationOperator {
 public:
  using CustomFunction = std::function<Vector(const Vector&)>;

  static ObservationFunction identity(Index n);
  static ObservationFunction componentwise(std::vector<ComponentMap> maps);
  static ObservationFunction linear(Matrix c);
  static ObservationFunction custom(Index input_dim, Index output_dim, CustomFunction fn,
                                    std::string name = "custom");

  // Ring stencil: out_i = left*x_{i-1} + center*x_i + right*x_{i+1}, cyclic.
  static ObservationFunction circulant(Index nodes, double center, double right, double left);

  ObservationKind kind() const { return kind_; }
  Index input_dim() const override { return input_dim_; }
  Index output_dim() const override { return output_dim_; }
  Vector apply(const Vector& x, Index /*step*/) const override { return evaluate(x); }
  Vector evaluate(const Vector& x) const;

  const Matrix& matrix() const { return matrix_; }
  const std::vector<ComponentMap>& components() const { return components_; }

  // Stable textual form used by config serialization.
  std::string describe() const;

 private:
  ObservationKind kind_ = ObservationKind::kIdentity;
  Index input_dim_ = 0;
  Index output_dim_ = 0;
  std::vector<ComponentMap> components_;
  Matrix matrix_;
  CustomFunction custom_;
  std::string name_;
};

// Parses the form produced by ObservationFunction::describe() for the
// identity, componentwise and circulant/linear kinds.
ObservationFunction parse_observation_function(const std::string& text, Index n);

// g(x) + b_k: the base function plus a per-step correction shared by every
// ensemble member evaluated at step k.
class CorrectedObservationFunction : public ObservationOperator {
 public:
  CorrectedObservationFunction(std::shared_ptr<const ObservationOperator> base,
                               std::shared_ptr<const Matrix> corrections);

  Index input_dim() const override { return base_->input_dim(); }
  Index output_dim() const override { return base_->output_dim(); }
  Vector apply(const Vector& x, Index step) const override;

  const ObservationOperator& base() const { return *base_; }
  Vector correction(Index step) const;

 private:
  std::shared_ptr<const ObservationOperator> base_;
  std::shared_ptr<const Matrix> corrections_;
};

// ---------------------------------------------------------------------------
// Delay embedding and nearest neighbors

struct Neighbors {
  std::vector<Index> indices;  // time indices, nearest first
  std::vector<double> distances;
};

// Exact nearest-neighbor index over the delay vectors
// z_k = [y_k, y_{k-1}, ..., y_{k-d}] for k = d..T-1.
class DelayIndex {
 public:
  DelayIndex(const Matrix& series, Index delays);

  Index delays() const { return delays_; }
  Index length() const { return length_; }  // T
  Index first_valid() const { return delays_; }
  Index last_valid() const { return length_ - 1; }
  Index count() const { return vectors_.cols(); }  // T - d
  Index vector_dim() const { return vectors_.rows(); }
  bool in_range(Index k) const { return k >= first_valid() && k <= last_valid(); }

  Vector delay_vector(Index k) const;

  // N nearest indexed vectors to z_k; ascending distance, ties to the smaller
  // time index.
  Neighbors query(Index k, Index count) const;
  Neighbors query_point(const Vector& z, Index count) const;

 private:
  Index delays_;
  Index length_;
  Matrix vectors_;  // column r holds z_{r+d}
};

DelayIndex build_delay_index(const ObservationSeries& obs, Index delays);

// Per-node indices over [y_{i-1}, y_i, y_{i+1}] and their delays (cyclic).
class LocalizedDelayIndex {
 public:
  LocalizedDelayIndex(const Matrix& series, Index delays);

  Index nodes() const { return static_cast<Index>(nodes_.size()); }
  const DelayIndex& node(Index i) const { return nodes_.at(static_cast<std::size_t>(i)); }

 private:
  std::vector<DelayIndex> nodes_;
};

LocalizedDelayIndex build_localized_index(const ObservationSeries& obs, Index delays);

// Exponential kernel with bandwidth half the mean neighbor distance.
Vector neighbor_weights(const std::vector<double>& distances);

// Neighbors and weights for every valid step, computed once.
struct NeighborTable {
  Index length = 0;       // T
  Index first_valid = 0;  // d
  Index per_step = 0;     // N
  std::vector<std::int32_t> indices;  // (T-d) * N time indices, row-major by step
  std::vector<double> weights;        // same layout

  Index steps() const { return length - first_valid; }
  bool operator==(const NeighborTable&) const = default;
};

NeighborTable build_neighbor_table(const DelayIndex& index, Index neighbors);

// b_k = sum_j w_kj * raw_{k_j}; zero for k < d.
Matrix smooth_residuals(const NeighborTable& table, const Matrix& raw);
Matrix smooth_residuals(const DelayIndex& index, Index neighbors, const Matrix& raw);

// Either one global table for all observation components or one table per
// node (component i smoothed with table i).
struct NeighborModel {
  std::vector<NeighborTable> tables;
  bool localized = false;

  Matrix smooth(const Matrix& raw) const;
  Index first_valid() const;
  bool operator==(const NeighborModel&) const = default;
};

NeighborModel build_neighbor_model(const ObservationSeries& obs, Index delays, Index neighbors,
                                   bool localized);

Matrix localized_smooth(const LocalizedDelayIndex& index, Index neighbors, const Matrix& raw);

// ---------------------------------------------------------------------------
// Correction table

struct CorrectionTable {
  Index iteration = 0;
  Matrix raw;       // T x m, b-hat
  Matrix smoothed;  // T x m, b
  std::shared_ptr<const NeighborModel> neighbors;
};

// `k, bhat_1..bhat_m, b_1..b_m`
void write_csv(const std::filesystem::path& path, const CorrectionTable& table);
// `node, k, n_1..n_N` (node is 0 for a global model)
void write_neighbors_csv(const std::filesystem::path& path, const NeighborModel& model);

}  // namespace omec
