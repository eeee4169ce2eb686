#include "omec/observation.hpp"

#include "omec/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace omec {

const char* to_string(ObservationKind kind) {
  switch (kind) {
    case ObservationKind::kIdentity: return "identity";
    case ObservationKind::kComponentwise: return "componentwise";
    case ObservationKind::kLinear: return "linear";
    case ObservationKind::kCustom: return "custom";
  }
  return "unknown";
}

double ComponentMap::operator()(double x) const {
  switch (map) {
    case ElementaryMap::kIdentity: return x;
    case ElementaryMap::kSin: return std::sin(x);
    case ElementaryMap::kCos: return std::cos(x);
    case ElementaryMap::kShift: return x + offset;
  }
  return x;
}

std::string ComponentMap::describe() const {
  switch (map) {
    case ElementaryMap::kIdentity: return "x";
    case ElementaryMap::kSin: return "sin";
    case ElementaryMap::kCos: return "cos";
    case ElementaryMap::kShift: return "shift(" + csv::format_double(offset) + ")";
  }
  return "x";
}

ObservationFunction ObservationFunction::identity(Index n) {
  if (n <= 0) throw Error(ErrorCode::kInvalidArgument, "identity dimension must be positive");
  ObservationFunction f;
  f.kind_ = ObservationKind::kIdentity;
  f.input_dim_ = n;
  f.output_dim_ = n;
  return f;
}

ObservationFunction ObservationFunction::componentwise(std::vector<ComponentMap> maps) {
  if (maps.empty()) throw Error(ErrorCode::kInvalidArgument, "componentwise map needs components");
  ObservationFunction f;
  f.kind_ = ObservationKind::kComponentwise;
  f.input_dim_ = static_cast<Index>(maps.size());
  f.output_dim_ = f.input_dim_;
  f.components_ = std::move(maps);
  return f;
}

ObservationFunction ObservationFunction::linear(Matrix c) {
  if (c.size() == 0) throw Error(ErrorCode::kInvalidArgument, "linear map needs a matrix");
  if (!c.allFinite()) throw Error(ErrorCode::kInvalidInput, "linear map has non-finite entries");
  ObservationFunction f;
  f.kind_ = ObservationKind::kLinear;
  f.input_dim_ = c.cols();
  f.output_dim_ = c.rows();
  f.matrix_ = std::move(c);
  return f;
}

ObservationFunction ObservationFunction::custom(Index input_dim, Index output_dim, CustomFunction fn,
                                                std::string name) {
  if (!fn) throw Error(ErrorCode::kInvalidArgument, "custom observation function is empty");
  ObservationFunction f;
  f.kind_ = ObservationKind::kCustom;
  f.input_dim_ = input_dim;
  f.output_dim_ = output_dim;
  f.custom_ = std::move(fn);
  f.name_ = std::move(name);
  return f;
}

ObservationFunction ObservationFunction::circulant(Index nodes, double center, double right,
                                                   double left) {
  if (nodes < 3) throw Error(ErrorCode::kInvalidArgument, "circulant map needs at least 3 nodes");
  Matrix c = Matrix::Zero(nodes, nodes);
  for (Index i = 0; i < nodes; ++i) {
    c(i, i) = center;
    c(i, (i + 1) % nodes) = right;
    c(i, (i + nodes - 1) % nodes) = left;
  }
  ObservationFunction f = linear(std::move(c));
  f.name_ = "circulant(" + csv::format_double(center) + "," + csv::format_double(right) + "," +
            csv::format_double(left) + ")";
  return f;
}

Vector ObservationFunction::evaluate(const Vector& x) const {
  if (x.size() != input_dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "observation function expects dimension " +
                                                   std::to_string(input_dim_) + ", got " +
                                                   std::to_string(x.size()));
  }
  switch (kind_) {
    case ObservationKind::kIdentity:
      return x;
    case ObservationKind::kComponentwise: {
      Vector y(output_dim_);
      for (Index i = 0; i < output_dim_; ++i) y(i) = components_[static_cast<std::size_t>(i)](x(i));
      return y;
    }
    case ObservationKind::kLinear:
      return matrix_ * x;
    case ObservationKind::kCustom: {
      Vector y = custom_(x);
      if (y.size() != output_dim_) {
        throw Error(ErrorCode::kDimensionMismatch, "custom observation returned wrong dimension");
      }
      return y;
    }
  }
  return x;
}

std::string ObservationFunction::describe() const {
  switch (kind_) {
    case ObservationKind::kIdentity:
      return "identity";
    case ObservationKind::kComponentwise: {
      std::string out = "componentwise:";
      for (std::size_t i = 0; i < components_.size(); ++i) {
        out += (i ? ";" : "") + components_[i].describe();
      }
      return out;
    }
    case ObservationKind::kLinear: {
      if (!name_.empty()) return name_;
      std::string out = "linear:";
      for (Index i = 0; i < matrix_.rows(); ++i) {
        for (Index j = 0; j < matrix_.cols(); ++j) {
          out += (j ? " " : "") + csv::format_double(matrix_(i, j));
        }
        if (i + 1 < matrix_.rows()) out += ";";
      }
      return out;
    }
    case ObservationKind::kCustom:
      return "custom:" + name_;
  }
  return "unknown";
}

namespace {

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream ss(text);
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

double parse_number(const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "not a number: '" + text + "'");
  }
}

}  // namespace

ObservationFunction parse_observation_function(const std::string& text, Index n) {
  if (text == "identity") return ObservationFunction::identity(n);
  if (text.rfind("componentwise:", 0) == 0) {
    std::vector<ComponentMap> maps;
    for (const auto& item : split_on(text.substr(14), ';')) {
      if (item == "x") {
        maps.push_back({ElementaryMap::kIdentity, 0.0});
      } else if (item == "sin") {
        maps.push_back({ElementaryMap::kSin, 0.0});
      } else if (item == "cos") {
        maps.push_back({ElementaryMap::kCos, 0.0});
      } else if (item.rfind("shift(", 0) == 0 && item.back() == ')') {
        maps.push_back({ElementaryMap::kShift, parse_number(item.substr(6, item.size() - 7))});
      } else {
        throw Error(ErrorCode::kInvalidConfig, "unknown component map '" + item + "'");
      }
    }
    if (static_cast<Index>(maps.size()) != n) {
      throw Error(ErrorCode::kInvalidConfig, "componentwise map has " + std::to_string(maps.size()) +
                                                 " components, state has " + std::to_string(n));
    }
    return ObservationFunction::componentwise(std::move(maps));
  }
  if (text.rfind("circulant(", 0) == 0 && text.back() == ')') {
    const auto args = split_on(text.substr(10, text.size() - 11), ',');
    if (args.size() != 3) throw Error(ErrorCode::kInvalidConfig, "circulant needs 3 coefficients");
    return ObservationFunction::circulant(n, parse_number(args[0]), parse_number(args[1]),
                                          parse_number(args[2]));
  }
  if (text.rfind("linear:", 0) == 0) {
    const auto rows = split_on(text.substr(7), ';');
    std::vector<std::vector<double>> values;
    for (const auto& row : rows) {
      std::vector<double> r;
      std::istringstream ss(row);
      std::string tok;
      while (ss >> tok) r.push_back(parse_number(tok));
      values.push_back(std::move(r));
    }
    Matrix c(static_cast<Index>(values.size()), static_cast<Index>(values.front().size()));
    for (Index i = 0; i < c.rows(); ++i) {
      if (static_cast<Index>(values[static_cast<std::size_t>(i)].size()) != c.cols()) {
        throw Error(ErrorCode::kInvalidConfig, "ragged linear observation matrix");
      }
      for (Index j = 0; j < c.cols(); ++j) c(i, j) = values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    if (c.cols() != n) throw Error(ErrorCode::kInvalidConfig, "linear map has wrong input dimension");
    return ObservationFunction::linear(std::move(c));
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown observation function '" + text + "'");
}

CorrectedObservationFunction::CorrectedObservationFunction(
    std::shared_ptr<const ObservationOperator> base, std::shared_ptr<const Matrix> corrections)
    : base_(std::move(base)), corrections_(std::move(corrections)) {
  if (!base_ || !corrections_) throw Error(ErrorCode::kInvalidArgument, "null correction input");
  if (corrections_->cols() != base_->output_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "correction width must equal observation dimension");
  }
}

Vector CorrectedObservationFunction::correction(Index step) const {
  if (step < 0 || step >= corrections_->rows()) {
    throw Error(ErrorCode::kInvalidArgument,
                "no correction stored for step " + std::to_string(step));
  }
  return corrections_->row(step).transpose();
}

Vector CorrectedObservationFunction::apply(const Vector& x, Index step) const {
  return base_->apply(x, step) + correction(step);
}

// ---------------------------------------------------------------------------

DelayIndex::DelayIndex(const Matrix& series, Index delays) : delays_(delays), length_(series.rows()) {
  if (delays < 0) throw Error(ErrorCode::kInvalidArgument, "delays must be non-negative");
  if (length_ <= delays) {
    throw Error(ErrorCode::kInsufficientData, "need more than " + std::to_string(delays) +
                                                  " observations, got " + std::to_string(length_));
  }
  if (!series.allFinite()) throw Error(ErrorCode::kInvalidInput, "non-finite observations");
  const Index m = series.cols();
  vectors_.resize(m * (delays + 1), length_ - delays);
  for (Index r = 0; r < vectors_.cols(); ++r) {
    const Index k = r + delays;
    for (Index lag = 0; lag <= delays; ++lag) {
      vectors_.col(r).segment(lag * m, m) = series.row(k - lag).transpose();
    }
  }
}

Vector DelayIndex::delay_vector(Index k) const {
  if (!in_range(k)) {
    throw Error(ErrorCode::kInvalidArgument, "step " + std::to_string(k) +
                                                 " has no full delay vector");
  }
  return vectors_.col(k - delays_);
}

Neighbors DelayIndex::query(Index k, Index count) const {
  if (!in_range(k)) {
    throw Error(ErrorCode::kInvalidArgument, "query step " + std::to_string(k) +
                                                 " outside valid range");
  }
  return query_point(vectors_.col(k - delays_), count);
}

Neighbors DelayIndex::query_point(const Vector& z, Index count) const {
  if (count < 1 || count > this->count()) {
    throw Error(ErrorCode::kInvalidArgument, "requested " + std::to_string(count) +
                                                 " neighbors from " +
                                                 std::to_string(this->count()) + " vectors");
  }
  if (z.size() != vector_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query vector has wrong dimension");
  }
  const Eigen::RowVectorXd dist = (vectors_.colwise() - z).colwise().squaredNorm();
  // Max-heap of the best (squared distance, column) pairs so far;
  // lexicographic pair order is the tie rule.
  using Entry = std::pair<double, Index>;
  std::vector<Entry> d2;
  d2.reserve(static_cast<std::size_t>(count));
  for (Index r = 0; r < dist.size(); ++r) {
    const Entry e{dist(r), r};
    if (static_cast<Index>(d2.size()) < count) {
      d2.push_back(e);
      std::push_heap(d2.begin(), d2.end());
    } else if (e < d2.front()) {
      std::pop_heap(d2.begin(), d2.end());
      d2.back() = e;
      std::push_heap(d2.begin(), d2.end());
    }
  }
  std::sort_heap(d2.begin(), d2.end());
  Neighbors out;
  out.indices.reserve(static_cast<std::size_t>(count));
  out.distances.reserve(static_cast<std::size_t>(count));
  for (Index j = 0; j < count; ++j) {
    const auto& [dist2, r] = d2[static_cast<std::size_t>(j)];
    out.indices.push_back(r + delays_);
    out.distances.push_back(std::sqrt(dist2));
  }
  return out;
}

DelayIndex build_delay_index(const ObservationSeries& obs, Index delays) {
  return DelayIndex(obs.observations, delays);
}

namespace {

Matrix ring_stencil(const Matrix& series, Index node) {
  const Index k = series.cols();
  Matrix local(series.rows(), 3);
  local.col(0) = series.col((node + k - 1) % k);
  local.col(1) = series.col(node);
  local.col(2) = series.col((node + 1) % k);
  return local;
}

}  // namespace

LocalizedDelayIndex::LocalizedDelayIndex(const Matrix& series, Index delays) {
  if (series.cols() < 3) {
    throw Error(ErrorCode::kInvalidArgument, "ring localization needs at least 3 nodes");
  }
  nodes_.reserve(static_cast<std::size_t>(series.cols()));
  for (Index i = 0; i < series.cols(); ++i) nodes_.emplace_back(ring_stencil(series, i), delays);
}

LocalizedDelayIndex build_localized_index(const ObservationSeries& obs, Index delays) {
  return LocalizedDelayIndex(obs.observations, delays);
}

Vector neighbor_weights(const std::vector<double>& distances) {
  const auto n = static_cast<Index>(distances.size());
  if (n == 0) return Vector();
  const double mean = std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(n);
  const double sigma = 0.5 * mean;
  if (!(sigma >= 1e-12)) return Vector::Constant(n, 1.0 / static_cast<double>(n));
  // Shifting by the smallest distance leaves the normalized weights unchanged
  // and keeps the largest exponent at zero.
  const double shift = *std::min_element(distances.begin(), distances.end());
  Vector w(n);
  for (Index j = 0; j < n; ++j) w(j) = std::exp(-(distances[static_cast<std::size_t>(j)] - shift) / sigma);
  return w / w.sum();
}

NeighborTable build_neighbor_table(const DelayIndex& index, Index neighbors) {
  if (neighbors < 1 || neighbors > index.count()) {
    throw Error(ErrorCode::kInvalidArgument, "neighbor count must be in [1, T - d]");
  }
  NeighborTable table;
  table.length = index.length();
  table.first_valid = index.first_valid();
  table.per_step = neighbors;
  const auto total = static_cast<std::size_t>(table.steps() * neighbors);
  table.indices.resize(total);
  table.weights.resize(total);
  for (Index k = index.first_valid(); k <= index.last_valid(); ++k) {
    const Neighbors nb = index.query(k, neighbors);
    const Vector w = neighbor_weights(nb.distances);
    const auto base = static_cast<std::size_t>((k - table.first_valid) * neighbors);
    for (Index j = 0; j < neighbors; ++j) {
      table.indices[base + static_cast<std::size_t>(j)] = static_cast<std::int32_t>(nb.indices[static_cast<std::size_t>(j)]);
      table.weights[base + static_cast<std::size_t>(j)] = w(j);
    }
  }
  return table;
}

namespace {

void smooth_columns(const NeighborTable& table, const Matrix& raw, Index first_col, Index cols,
                    Matrix& out) {
  const Index n = table.per_step;
  for (Index k = table.first_valid; k < table.length; ++k) {
    const auto base = static_cast<std::size_t>((k - table.first_valid) * n);
    for (Index c = first_col; c < first_col + cols; ++c) {
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) {
        acc += table.weights[base + static_cast<std::size_t>(j)] *
               raw(table.indices[base + static_cast<std::size_t>(j)], c);
      }
      out(k, c) = acc;
    }
  }
}

}  // namespace

Matrix smooth_residuals(const NeighborTable& table, const Matrix& raw) {
  if (raw.rows() != table.length) {
    throw Error(ErrorCode::kDimensionMismatch, "residuals have " + std::to_string(raw.rows()) +
                                                   " rows, index covers " +
                                                   std::to_string(table.length));
  }
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  smooth_columns(table, raw, 0, raw.cols(), out);
  return out;
}

Matrix smooth_residuals(const DelayIndex& index, Index neighbors, const Matrix& raw) {
  return smooth_residuals(build_neighbor_table(index, neighbors), raw);
}

Matrix NeighborModel::smooth(const Matrix& raw) const {
  if (tables.empty()) throw Error(ErrorCode::kInvalidArgument, "empty neighbor model");
  if (!localized) return smooth_residuals(tables.front(), raw);
  if (raw.cols() != static_cast<Index>(tables.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "localized model has " +
                                                   std::to_string(tables.size()) +
                                                   " nodes, residuals have " +
                                                   std::to_string(raw.cols()) + " columns");
  }
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.cols(); ++i) {
    const auto& table = tables[static_cast<std::size_t>(i)];
    if (raw.rows() != table.length) {
      throw Error(ErrorCode::kDimensionMismatch, "residual length does not match index");
    }
    smooth_columns(table, raw, i, 1, out);
  }
  return out;
}

Index NeighborModel::first_valid() const {
  return tables.empty() ? 0 : tables.front().first_valid;
}

NeighborModel build_neighbor_model(const ObservationSeries& obs, Index delays, Index neighbors,
                                   bool localized) {
  NeighborModel model;
  model.localized = localized;
  if (!localized) {
    model.tables.push_back(build_neighbor_table(build_delay_index(obs, delays), neighbors));
    return model;
  }
  if (obs.dimension() < 3) {
    throw Error(ErrorCode::kInvalidArgument, "ring localization needs at least 3 nodes");
  }
  model.tables.reserve(static_cast<std::size_t>(obs.dimension()));
  for (Index i = 0; i < obs.dimension(); ++i) {
    // one node at a time keeps only a single local index alive
    const DelayIndex local(ring_stencil(obs.observations, i), delays);
    model.tables.push_back(build_neighbor_table(local, neighbors));
  }
  return model;
}

Matrix localized_smooth(const LocalizedDelayIndex& index, Index neighbors, const Matrix& raw) {
  if (raw.cols() != index.nodes()) {
    throw Error(ErrorCode::kDimensionMismatch, "node count mismatch");
  }
  NeighborModel model;
  model.localized = true;
  for (Index i = 0; i < index.nodes(); ++i) {
    model.tables.push_back(build_neighbor_table(index.node(i), neighbors));
  }
  return model.smooth(raw);
}

void write_csv(const std::filesystem::path& path, const CorrectionTable& table) {
  const Index m = table.raw.cols();
  std::vector<std::string> header{"k"};
  for (const auto& h : csv::numbered("bhat_", m)) header.push_back(h);
  for (const auto& h : csv::numbered("b_", m)) header.push_back(h);
  Matrix rows(table.raw.rows(), 1 + 2 * m);
  for (Index k = 0; k < rows.rows(); ++k) rows(k, 0) = static_cast<double>(k);
  rows.middleCols(1, m) = table.raw;
  rows.rightCols(m) = table.smoothed;
  csv::write(path, header, rows);
}

void write_neighbors_csv(const std::filesystem::path& path, const NeighborModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const Index n = model.tables.empty() ? 0 : model.tables.front().per_step;
  out << "node,k";
  for (Index j = 1; j <= n; ++j) out << ",n_" << j;
  out << '\n';
  for (std::size_t node = 0; node < model.tables.size(); ++node) {
    const auto& t = model.tables[node];
    for (Index k = t.first_valid; k < t.length; ++k) {
      out << node << ',' << k;
      const auto base = static_cast<std::size_t>((k - t.first_valid) * t.per_step);
      for (Index j = 0; j < t.per_step; ++j) out << ',' << t.indices[base + static_cast<std::size_t>(j)];
      out << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace omec
