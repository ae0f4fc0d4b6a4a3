#include "saef/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace saef {

// ---------------------------------------------------------------- Objective

double Objective::loss_and_gradient(std::span<const double> x, std::span<double> out) const {
  gradient(x, out);
  return loss(x);
}

ParamVector Objective::full_gradient(std::span<const double> x) const {
  ParamVector g(dimension());
  gradient(x, g.span());
  return g;
}

ParamVector Objective::stochastic_gradient(std::span<const double> x, const Minibatch& batch) const {
  ParamVector g(dimension());
  stochastic_gradient(x, batch, g.span());
  return g;
}

// ---------------------------------------------------------------- quadratic

QuadraticObjective::QuadraticObjective(std::vector<double> matrix, std::vector<double> linear,
                                       std::vector<double> eigenvalues, double noise_std)
    : d_(linear.size()),
      matrix_(std::move(matrix)),
      linear_(std::move(linear)),
      eigenvalues_(std::move(eigenvalues)),
      noise_std_(noise_std),
      partition_(BlockPartition::whole(d_)),
      minimizer_(d_) {
  require_same_length(matrix_.size(), d_ * d_, "quadratic matrix");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> a(matrix_.data(), static_cast<Eigen::Index>(d_),
                                   static_cast<Eigen::Index>(d_));
  const Eigen::Map<const Eigen::VectorXd> b(linear_.data(), static_cast<Eigen::Index>(d_));
  const Eigen::VectorXd xs = a.llt().solve(b);
  for (std::size_t i = 0; i < d_; ++i) minimizer_[i] = xs[static_cast<Eigen::Index>(i)];
  optimal_value_ = loss(minimizer_);
}

double QuadraticObjective::loss(std::span<const double> x) const {
  require_same_length(x.size(), d_, "quadratic loss");
  double quad = 0.0;
  for (std::size_t i = 0; i < d_; ++i) {
    const double* row = matrix_.data() + i * d_;
    double ax = 0.0;
    for (std::size_t j = 0; j < d_; ++j) ax += row[j] * x[j];
    quad += x[i] * ax;
  }
  return 0.5 * quad - dot(linear_, x);
}

void QuadraticObjective::gradient(std::span<const double> x, std::span<double> out) const {
  require_same_length(x.size(), d_, "quadratic gradient");
  for (std::size_t i = 0; i < d_; ++i) {
    const double* row = matrix_.data() + i * d_;
    double ax = 0.0;
    for (std::size_t j = 0; j < d_; ++j) ax += row[j] * x[j];
    out[i] = ax - linear_[i];
  }
}

Minibatch QuadraticObjective::sample(RngStream& rng, std::size_t /*batch_size*/) const {
  Minibatch batch;
  batch.noise.resize(d_);
  const double scale = noise_std_ / std::sqrt(static_cast<double>(d_));
  for (double& v : batch.noise) v = scale * rng.normal();
  return batch;
}

void QuadraticObjective::stochastic_gradient(std::span<const double> x, const Minibatch& batch,
                                             std::span<double> out) const {
  gradient(x, out);
  require_same_length(batch.noise.size(), d_, "quadratic noise");
  for (std::size_t i = 0; i < d_; ++i) out[i] += batch.noise[i];
}

ObjectiveBundle make_quadratic(std::size_t d, double condition_number, double noise_std,
                               std::uint64_t seed) {
  if (d == 0) throw std::invalid_argument("quadratic dimension must be >= 1");
  if (!(condition_number >= 1.0)) throw std::invalid_argument("condition_number must be >= 1");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");

  RngStream rng = RngStream::derive(seed, 0x9a0d);
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();

  // Largest eigenvalue is condition_number in every dimension, so L is exact.
  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double t = d == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(d - 1);
    eig[i] = std::pow(condition_number, t);
  }
  Eigen::VectorXd lam(n);
  for (Eigen::Index i = 0; i < n; ++i) lam[i] = eig[static_cast<std::size_t>(i)];
  Eigen::MatrixXd a = q * lam.asDiagonal() * q.transpose();
  a = 0.5 * (a + a.transpose());

  std::vector<double> matrix(d * d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) matrix[static_cast<std::size_t>(i * n + j)] = a(i, j);
  std::vector<double> linear(d);
  for (double& v : linear) v = rng.normal();

  auto obj = std::make_shared<QuadraticObjective>(std::move(matrix), std::move(linear), eig, noise_std);
  ModelConstants c;
  c.L = condition_number;
  c.sigma_sq = noise_std * noise_std;
  c.M_sq = l2_norm_sq(obj->full_gradient(obj->initial_point()));
  c.exact = true;
  c.sigma_estimated = false;
  // Unbounded on R^d; callers replace this with the trajectory maximum.
  c.M_estimated = true;
  return {std::move(obj), c};
}

// ---------------------------------------------------------------- datasets

void Dataset::validate() const {
  if (n == 0) throw std::invalid_argument("dataset has no rows");
  if (p == 0) throw std::invalid_argument("dataset has no features");
  require_same_length(features.size(), n * p, "dataset features");
  require_same_length(labels.size(), n, "dataset labels");
  require_finite(features, "dataset features");
  require_finite(labels, "dataset labels");
}

DatasetFormat parse_dataset_format(std::string_view name) {
  if (name == "csv") return DatasetFormat::csv;
  if (name == "libsvm") return DatasetFormat::libsvm;
  throw std::invalid_argument("unknown dataset format '" + std::string(name) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view tok, std::size_t line) {
  tok = trim(tok);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError("cannot parse number '" + std::string(tok) + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite value", line);
  return v;
}

std::size_t parse_index(std::string_view tok, std::size_t line) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError("cannot parse feature index '" + std::string(tok) + "'", line);
  if (v == 0) throw ParseError("libsvm feature indices are 1-based", line);
  return v;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     std::optional<std::size_t> num_features) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");

  Dataset data;
  std::string raw;
  std::size_t line_no = 0;
  if (format == DatasetFormat::csv) {
    std::size_t cols = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const auto line = trim(raw);
      if (line.empty()) continue;
      std::vector<double> vals;
      std::size_t start = 0;
      while (true) {
        const auto comma = line.find(',', start);
        vals.push_back(parse_real(line.substr(start, comma - start), line_no));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (vals.size() < 2) throw ParseError("csv row needs at least one feature and a label", line_no);
      if (cols == 0) cols = vals.size();
      if (vals.size() != cols)
        throw ParseError("inconsistent column count: expected " + std::to_string(cols) + ", got " +
                             std::to_string(vals.size()),
                         line_no);
      data.labels.push_back(vals.back());
      data.features.insert(data.features.end(), vals.begin(), vals.end() - 1);
    }
    data.p = cols == 0 ? 0 : cols - 1;
  } else {
    struct Row {
      double label;
      std::vector<std::pair<std::size_t, double>> entries;
    };
    std::vector<Row> rows;
    std::size_t max_index = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      auto line = trim(std::string_view(raw).substr(0, raw.find('#')));
      if (line.empty()) continue;
      std::istringstream toks{std::string(line)};
      std::string tok;
      toks >> tok;
      Row row{parse_real(tok, line_no), {}};
      while (toks >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw ParseError("expected idx:val, got '" + tok + "'", line_no);
        const std::size_t idx = parse_index(std::string_view(tok).substr(0, colon), line_no);
        if (num_features && idx > *num_features)
          throw ParseError("feature index " + std::to_string(idx) + " exceeds dimension " +
                               std::to_string(*num_features),
                           line_no);
        max_index = std::max(max_index, idx);
        row.entries.emplace_back(idx, parse_real(std::string_view(tok).substr(colon + 1), line_no));
      }
      rows.push_back(std::move(row));
    }
    data.p = num_features.value_or(max_index);
    data.features.assign(rows.size() * data.p, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      data.labels.push_back(rows[i].label);
      for (const auto& [idx, val] : rows[i].entries) data.features[i * data.p + idx - 1] = val;
    }
  }
  if (data.labels.empty()) throw ParseError("dataset file is empty", std::max<std::size_t>(line_no, 1));
  data.n = data.labels.size();
  if (data.p == 0) throw ParseError("dataset has no features", line_no);
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path, DatasetFormat format) {
  data.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset '" + path.string() + "'");
  char buf[64];
  auto fmt = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string_view(buf, static_cast<std::size_t>(r.ptr - buf));
  };
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto row = data.row(i);
    if (format == DatasetFormat::csv) {
      for (double v : row) out << fmt(v) << ',';
      out << fmt(data.labels[i]) << '\n';
    } else {
      out << (data.labels[i] > 0 ? "+" : "") << fmt(data.labels[i]);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j] != 0.0) out << ' ' << (j + 1) << ':' << fmt(row[j]);
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing dataset '" + path.string() + "'");
}

Dataset make_two_gaussians(std::size_t n, std::size_t p, std::uint64_t seed, double separation,
                           double condition_number) {
  if (n == 0) throw std::invalid_argument("n must be >= 1");
  if (p == 0) throw std::invalid_argument("p must be >= 1");
  if (!(condition_number >= 1.0)) throw std::invalid_argument("condition_number must be >= 1");
  RngStream rng = RngStream::derive(seed, 0xda7a);
  Dataset data;
  data.n = n;
  data.p = p;
  data.features.resize(n * p);
  data.labels.resize(n);
  const double shift = separation / std::sqrt(static_cast<double>(p));
  std::vector<double> scale(p, 1.0);
  for (std::size_t j = 0; j < p && p > 1; ++j)
    scale[j] = std::pow(condition_number, -0.5 * static_cast<double>(j) / static_cast<double>(p - 1));
  for (std::size_t i = 0; i < n; ++i) {
    const double y = (i % 2 == 0) ? 1.0 : -1.0;
    data.labels[i] = y;
    for (std::size_t j = 0; j < p; ++j) data.features[i * p + j] = y * shift + scale[j] * rng.normal();
  }
  return data;
}

// ---------------------------------------------------------------- logistic

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class LogisticObjective final : public Objective {
 public:
  LogisticObjective(Dataset data, double l2_reg)
      : data_(std::move(data)), l2_(l2_reg), partition_(BlockPartition::whole(data_.p)) {}

  std::string name() const override { return "logistic"; }
  std::size_t dimension() const override { return data_.p; }
  const BlockPartition& partition() const override { return partition_; }
  std::optional<std::size_t> num_samples() const override { return data_.n; }

  double loss(std::span<const double> w) const override {
    require_same_length(w.size(), data_.p, "logistic loss");
    double s = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) s += softplus(-data_.labels[i] * dot(data_.row(i), w));
    return s / static_cast<double>(data_.n) + 0.5 * l2_ * l2_norm_sq(w);
  }

  double loss_and_gradient(std::span<const double> w, std::span<double> out) const override {
    require_same_length(w.size(), data_.p, "logistic gradient");
    std::fill(out.begin(), out.end(), 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) s += accumulate(i, w, out);
    finish(w, out, static_cast<double>(data_.n));
    return s / static_cast<double>(data_.n) + 0.5 * l2_ * l2_norm_sq(w);
  }

  void gradient(std::span<const double> w, std::span<double> out) const override {
    loss_and_gradient(w, out);
  }

  Minibatch sample(RngStream& rng, std::size_t batch_size) const override {
    Minibatch b;
    b.indices.resize(std::max<std::size_t>(batch_size, 1));
    for (auto& i : b.indices) i = static_cast<std::uint32_t>(rng.below(data_.n));
    return b;
  }

  void stochastic_gradient(std::span<const double> w, const Minibatch& batch,
                           std::span<double> out) const override {
    require_same_length(w.size(), data_.p, "logistic gradient");
    if (batch.indices.empty()) throw std::invalid_argument("empty minibatch");
    std::fill(out.begin(), out.end(), 0.0);
    for (auto i : batch.indices) accumulate(i, w, out);
    finish(w, out, static_cast<double>(batch.indices.size()));
  }

  const Dataset& data() const { return data_; }

 private:
  double accumulate(std::size_t i, std::span<const double> w, std::span<double> out) const {
    const auto a = data_.row(i);
    const double y = data_.labels[i];
    const double z = y * dot(a, w);
    const double coef = -y * sigmoid(-z);
    for (std::size_t j = 0; j < a.size(); ++j) out[j] += coef * a[j];
    return softplus(-z);
  }
  void finish(std::span<const double> w, std::span<double> out, double count) const {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = out[j] / count + l2_ * w[j];
  }

  Dataset data_;
  double l2_;
  BlockPartition partition_;
};

double gram_lambda_max(const Dataset& data) {
  const auto p = static_cast<Eigen::Index>(data.p);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> x(data.features.data(), static_cast<Eigen::Index>(data.n), p);
  const Eigen::MatrixXd gram = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

struct NoiseEstimate {
  double sigma_sq;
  double grad_sq;
};

NoiseEstimate noise_at(const Objective& obj, std::span<const double> x, std::size_t draws,
                       std::size_t batch_size, RngStream& rng) {
  const ParamVector full = obj.full_gradient(x);
  ParamVector g(obj.dimension());
  double acc = 0.0;
  for (std::size_t s = 0; s < draws; ++s) {
    obj.stochastic_gradient(x, obj.sample(rng, batch_size), g.span());
    double d2 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) d2 += (g[i] - full[i]) * (g[i] - full[i]);
    acc += d2;
  }
  return {draws == 0 ? 0.0 : acc / static_cast<double>(draws), l2_norm_sq(full)};
}

}  // namespace

ObjectiveBundle make_logistic(Dataset data, double l2_reg, std::size_t batch_size,
                              std::uint64_t seed, std::size_t estimation_draws) {
  data.validate();
  if (!(l2_reg >= 0.0)) throw std::invalid_argument("l2_reg must be >= 0");
  for (double& y : data.labels) {
    if (y == 0.0) y = -1.0;
    if (y != 1.0 && y != -1.0)
      throw std::invalid_argument("logistic regression needs binary labels in {-1,+1} or {0,1}");
  }
  const double lmax = gram_lambda_max(data);
  const double n = static_cast<double>(data.n);
  auto obj = std::make_shared<LogisticObjective>(std::move(data), l2_reg);

  ModelConstants c;
  c.L = 0.25 * lmax / n + l2_reg;
  c.exact = true;
  RngStream rng = RngStream::derive(seed, 0x5e11);
  const auto est = noise_at(*obj, obj->initial_point(), estimation_draws, batch_size, rng);
  c.sigma_sq = est.sigma_sq;
  c.M_sq = est.grad_sq;
  c.sigma_estimated = true;
  c.M_estimated = true;
  return {std::move(obj), c};
}

// ---------------------------------------------------------------- mlp

namespace {

/// Parameter layout: W1 (hidden x p, row-major), b1 (hidden), w2 (hidden), b2 (1).
class MlpObjective final : public Objective {
 public:
  MlpObjective(Dataset data, std::size_t hidden, ParamVector init)
      : data_(std::move(data)),
        hidden_(hidden),
        partition_(make_partition(data_.p, hidden)),
        init_(std::move(init)) {}

  std::string name() const override { return "mlp"; }
  std::size_t dimension() const override { return partition_.dimension(); }
  const BlockPartition& partition() const override { return partition_; }
  std::optional<std::size_t> num_samples() const override { return data_.n; }
  ParamVector initial_point() const override { return init_; }

  double loss(std::span<const double> x) const override {
    require_same_length(x.size(), dimension(), "mlp loss");
    std::vector<double> h(hidden_);
    double s = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) {
      const double r = forward(x, i, h) - data_.labels[i];
      s += 0.5 * r * r;
    }
    return s / static_cast<double>(data_.n);
  }

  double loss_and_gradient(std::span<const double> x, std::span<double> out) const override {
    require_same_length(x.size(), dimension(), "mlp gradient");
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> h(hidden_);
    double s = 0.0;
    for (std::size_t i = 0; i < data_.n; ++i) s += backprop(x, i, h, out);
    const double n = static_cast<double>(data_.n);
    for (double& g : out) g /= n;
    return s / n;
  }

  void gradient(std::span<const double> x, std::span<double> out) const override {
    loss_and_gradient(x, out);
  }

  Minibatch sample(RngStream& rng, std::size_t batch_size) const override {
    Minibatch b;
    b.indices.resize(std::max<std::size_t>(batch_size, 1));
    for (auto& i : b.indices) i = static_cast<std::uint32_t>(rng.below(data_.n));
    return b;
  }

  void stochastic_gradient(std::span<const double> x, const Minibatch& batch,
                           std::span<double> out) const override {
    require_same_length(x.size(), dimension(), "mlp gradient");
    if (batch.indices.empty()) throw std::invalid_argument("empty minibatch");
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> h(hidden_);
    for (auto i : batch.indices) backprop(x, i, h, out);
    const double n = static_cast<double>(batch.indices.size());
    for (double& g : out) g /= n;
  }

  static BlockPartition make_partition(std::size_t p, std::size_t hidden) {
    const std::size_t sizes[] = {hidden * p, hidden, hidden, 1};
    return BlockPartition::from_sizes(sizes);
  }

 private:
  double forward(std::span<const double> x, std::size_t i, std::vector<double>& h) const {
    const std::size_t p = data_.p;
    const auto a = data_.row(i);
    const double* w1 = x.data();
    const double* b1 = w1 + hidden_ * p;
    const double* w2 = b1 + hidden_;
    const double b2 = w2[hidden_];
    double out = b2;
    for (std::size_t j = 0; j < hidden_; ++j) {
      double z = b1[j];
      for (std::size_t c = 0; c < p; ++c) z += w1[j * p + c] * a[c];
      h[j] = std::tanh(z);
      out += w2[j] * h[j];
    }
    return out;
  }

  double backprop(std::span<const double> x, std::size_t i, std::vector<double>& h,
                  std::span<double> g) const {
    const std::size_t p = data_.p;
    const double r = forward(x, i, h) - data_.labels[i];
    const auto a = data_.row(i);
    const double* w2 = x.data() + hidden_ * p + hidden_;
    double* g_w1 = g.data();
    double* g_b1 = g_w1 + hidden_ * p;
    double* g_w2 = g_b1 + hidden_;
    double* g_b2 = g_w2 + hidden_;
    *g_b2 += r;
    for (std::size_t j = 0; j < hidden_; ++j) {
      g_w2[j] += r * h[j];
      const double dz = r * w2[j] * (1.0 - h[j] * h[j]);
      g_b1[j] += dz;
      for (std::size_t c = 0; c < p; ++c) g_w1[j * p + c] += dz * a[c];
    }
    return 0.5 * r * r;
  }

  Dataset data_;
  std::size_t hidden_;
  BlockPartition partition_;
  ParamVector init_;
};

}  // namespace

ObjectiveBundle make_mlp(Dataset data, std::size_t hidden, std::uint64_t seed,
                         std::size_t batch_size) {
  data.validate();
  if (hidden == 0) throw std::invalid_argument("hidden must be >= 1");
  const std::size_t p = data.p;
  ParamVector init(hidden * p + 2 * hidden + 1);
  RngStream rng = RngStream::derive(seed, 0x3170);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(p));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t k = 0; k < hidden * p; ++k) init[k] = s1 * rng.normal();
  for (std::size_t j = 0; j < hidden; ++j) init[hidden * p + hidden + j] = s2 * rng.normal();

  auto obj = std::make_shared<MlpObjective>(std::move(data), hidden, std::move(init));
  ModelConstants c = estimate_constants(*obj, 8, 256, seed, batch_size, 1.0);
  c.L *= kEstimateSafetyFactor;
  c.sigma_sq *= kEstimateSafetyFactor;
  c.M_sq *= kEstimateSafetyFactor;
  return {std::move(obj), c};
}

// ---------------------------------------------------------------- estimation

namespace {

ParamVector probe_point(const Objective& obj, RngStream& rng, double radius) {
  ParamVector x = obj.initial_point();
  const double s = radius / std::sqrt(static_cast<double>(x.size()));
  for (double& v : x) v += s * rng.normal();
  return x;
}

}  // namespace

ModelConstants estimate_constants(const Objective& obj, std::size_t probe_points,
                                  std::size_t samples, std::uint64_t seed, std::size_t batch_size,
                                  double radius) {
  if (probe_points < 2) throw std::invalid_argument("estimate_constants needs >= 2 probe points");
  RngStream rng = RngStream::derive(seed, 0xc0f5);
  std::vector<ParamVector> xs;
  std::vector<ParamVector> gs;
  ModelConstants c;
  c.exact = false;
  for (std::size_t j = 0; j < probe_points; ++j) {
    xs.push_back(probe_point(obj, rng, radius));
    const auto est = noise_at(obj, xs.back(), samples, batch_size, rng);
    c.sigma_sq = std::max(c.sigma_sq, est.sigma_sq);
    c.M_sq = std::max(c.M_sq, est.grad_sq);
    gs.push_back(obj.full_gradient(xs.back()));
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      const double dx = std::sqrt(l2_norm_sq(subtract(xs[i], xs[j])));
      if (dx == 0.0) continue;
      c.L = std::max(c.L, std::sqrt(l2_norm_sq(subtract(gs[i], gs[j]))) / dx);
    }
  }
  return c;
}

GradientCheck check_gradient(const Objective& obj, std::size_t points, double tolerance,
                             std::uint64_t seed, bool per_coordinate, double radius) {
  RngStream rng = RngStream::derive(seed, 0x6c4e);
  GradientCheck out;
  const std::size_t d = obj.dimension();
  ParamVector fd(d);
  for (std::size_t k = 0; k < points; ++k) {
    ParamVector x = probe_point(obj, rng, radius);
    const ParamVector g = obj.full_gradient(x);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[i];
      const double h = 1e-4 * std::max(1.0, std::abs(xi));
      auto f_at = [&](double step) {
        x[i] = xi + step;
        const double v = obj.loss(x);
        x[i] = xi;
        return v;
      };
      fd[i] = (-f_at(2 * h) + 8 * f_at(h) - 8 * f_at(-h) + f_at(-2 * h)) / (12 * h);
    }
    if (per_coordinate) {
      for (std::size_t i = 0; i < d; ++i) {
        const double rel = std::abs(g[i] - fd[i]) / std::max({std::abs(g[i]), std::abs(fd[i]), 1e-6});
        if (rel > out.worst_relative_error) {
          out.worst_relative_error = rel;
          out.worst_point = k;
          out.worst_coordinate = i;
        }
      }
    } else {
      const double denom = std::max({std::sqrt(l2_norm_sq(g)), std::sqrt(l2_norm_sq(fd)), 1e-12});
      const double rel = std::sqrt(l2_norm_sq(subtract(g, fd))) / denom;
      if (rel > out.worst_relative_error) {
        out.worst_relative_error = rel;
        out.worst_point = k;
      }
    }
  }
  out.passed = out.worst_relative_error <= tolerance;
  return out;
}

GradientCheck check_directional_gradient(const Objective& obj, std::size_t directions,
                                         double tolerance, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, 0xd1a9);
  GradientCheck out;
  const std::size_t d = obj.dimension();
  const ParamVector x = obj.initial_point();
  const ParamVector g = obj.full_gradient(x);
  const double g_norm = std::sqrt(l2_norm_sq(g));
  ParamVector u(d), y(d);
  for (std::size_t k = 0; k < directions; ++k) {
    for (auto& v : u) v = rng.normal();
    const double n = std::sqrt(l2_norm_sq(u));
    for (auto& v : u) v /= n;
    const double h = 1e-4 * std::max(1.0, linf_norm(x));
    auto f_at = [&](double step) {
      for (std::size_t i = 0; i < d; ++i) y[i] = x[i] + step * u[i];
      return obj.loss(y);
    };
    const double fd = (-f_at(2 * h) + 8 * f_at(h) - 8 * f_at(-h) + f_at(-2 * h)) / (12 * h);
    const double an = dot(g, u);
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6 * (1.0 + g_norm)});
    if (rel > out.worst_relative_error) {
      out.worst_relative_error = rel;
      out.worst_point = k;
    }
  }
  out.passed = out.worst_relative_error <= tolerance;
  return out;
}

}  // namespace saef
