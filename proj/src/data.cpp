#include "lmdan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

namespace lmdan::data {

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.features = features.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.domain = domain;
  out.class_count = class_count;
  return out;
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw InvalidArgument("dataset: empty");
  if (features.rows() != labels.size()) throw InvalidArgument("dataset: feature/label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw InvalidArgument("dataset: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
  }
  if (!features.all_finite()) throw InvalidArgument("dataset: non-finite feature value");
}

DriftSpec DriftSpec::halves(std::size_t class_count, double source_rate, double target_rate) {
  DriftSpec s;
  s.source_drop_rate = source_rate;
  s.target_drop_rate = target_rate;
  const std::size_t first = (class_count + 1) / 2;
  for (std::size_t k = 0; k < first; ++k) s.source_classes.push_back(k);
  for (std::size_t k = first; k < class_count; ++k) s.target_classes.push_back(k);
  return s;
}

void DriftSpec::validate(std::size_t class_count) const {
  for (double r : {source_drop_rate, target_drop_rate}) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("drift: drop rate must lie in [0, 1)");
  }
  for (const auto* set : {&source_classes, &target_classes}) {
    for (std::size_t k : *set) {
      if (k >= class_count) throw InvalidArgument("drift: class " + std::to_string(k) + " out of range");
    }
  }
}

void BlobConfig::validate() const {
  if (class_count < 2) throw InvalidArgument("blobs: need at least 2 classes");
  if (per_class < 1) throw InvalidArgument("blobs: need at least 1 sample per class");
  if (dim < 2) throw InvalidArgument("blobs: feature dim must be at least 2");
  if (!(stddev > 0.0)) throw InvalidArgument("blobs: stddev must be positive");
  if (shift.size() != dim) throw InvalidArgument("blobs: shift vector length must equal dim");
}

namespace {

LabeledDataset sample_blobs(const BlobConfig& cfg, const std::vector<std::vector<double>>& means,
                            Domain domain, Rng& rng) {
  const std::size_t n = cfg.class_count * cfg.per_class;
  LabeledDataset ds;
  ds.features = Matrix(n, cfg.dim);
  ds.labels.resize(n);
  ds.domain = domain;
  ds.class_count = cfg.class_count;
  std::size_t r = 0;
  for (std::size_t k = 0; k < cfg.class_count; ++k) {
    for (std::size_t s = 0; s < cfg.per_class; ++s, ++r) {
      for (std::size_t c = 0; c < cfg.dim; ++c) ds.features(r, c) = rng.gaussian(means[k][c], cfg.stddev);
      ds.labels[r] = static_cast<int>(k);
    }
  }
  return ds.subset(rng.permutation(n));
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> gen_blob_pair(const BlobConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double theta = cfg.rotation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  std::vector<std::vector<double>> src_means, tgt_means;
  for (std::size_t k = 0; k < cfg.class_count; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg.class_count);
    std::vector<double> mu(cfg.dim, 0.0);
    mu[0] = cfg.radius * std::cos(a);
    mu[1] = cfg.radius * std::sin(a);
    std::vector<double> nu = mu;
    nu[0] = ct * mu[0] - st * mu[1];
    nu[1] = st * mu[0] + ct * mu[1];
    for (std::size_t c = 0; c < cfg.dim; ++c) nu[c] += cfg.shift[c];
    src_means.push_back(std::move(mu));
    tgt_means.push_back(std::move(nu));
  }
  Rng src_rng(Rng::derive_seed(seed, 0));
  Rng tgt_rng(Rng::derive_seed(seed, 1));
  return {sample_blobs(cfg, src_means, Domain::source, src_rng),
          sample_blobs(cfg, tgt_means, Domain::target, tgt_rng)};
}

std::size_t retained_count(std::size_t n, double drop_rate) {
  if (n == 0) return 0;
  const double keep = std::floor((1.0 - drop_rate) * static_cast<double>(n) + 0.5);
  return std::clamp<std::size_t>(static_cast<std::size_t>(keep), 1, n);
}

LabeledDataset apply_drift(const LabeledDataset& ds, const DriftSpec& spec, std::uint64_t seed) {
  spec.validate(ds.class_count);
  const bool source = ds.domain == Domain::source;
  const double rate = source ? spec.source_drop_rate : spec.target_drop_rate;
  const auto& classes = source ? spec.source_classes : spec.target_classes;

  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  Rng rng(seed);
  std::vector<char> designated(ds.class_count, 0);
  for (std::size_t k : classes) {
    if (by_class[k].empty()) {
      throw InvalidArgument("apply_drift: designated class " + std::to_string(k) + " is absent");
    }
    designated[k] = 1;
  }
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    auto& members = by_class[k];
    if (designated[k]) {
      rng.shuffle(members);
      members.resize(retained_count(members.size(), rate));
      std::sort(members.begin(), members.end());
    }
    keep.insert(keep.end(), members.begin(), members.end());
  }
  rng.shuffle(keep);
  return ds.subset(keep);
}

double label_kl(const std::vector<double>& source_counts, const std::vector<double>& target_counts,
                double smoothing) {
  if (source_counts.size() != target_counts.size()) throw InvalidArgument("label_kl: class count mismatch");
  if (!(smoothing >= 0.0)) throw InvalidArgument("label_kl: smoothing must be nonnegative");
  double zs = 0.0, zt = 0.0;
  for (std::size_t k = 0; k < source_counts.size(); ++k) {
    zs += source_counts[k] + smoothing;
    zt += target_counts[k] + smoothing;
  }
  if (!(zs > 0.0) || !(zt > 0.0)) throw InvalidArgument("label_kl: empty label distribution");
  double kl = 0.0;
  for (std::size_t k = 0; k < source_counts.size(); ++k) {
    const double p = (source_counts[k] + smoothing) / zs;
    const double q = (target_counts[k] + smoothing) / zt;
    if (p == 0.0) continue;
    if (q == 0.0) {
      throw InvalidArgument("label_kl: target class " + std::to_string(k) +
                            " is empty; use smoothing > 0");
    }
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double label_kl(const LabeledDataset& source, const LabeledDataset& target, double smoothing) {
  if (source.class_count != target.class_count) throw InvalidArgument("label_kl: class count mismatch");
  auto to_real = [](const std::vector<std::size_t>& c) {
    return std::vector<double>(c.begin(), c.end());
  };
  return label_kl(to_real(source.class_counts()), to_real(target.class_counts()), smoothing);
}

double default_smoothing(const LabeledDataset& source, const LabeledDataset& target) {
  for (auto c : source.class_counts())
    if (c == 0) return 0.5;
  for (auto c : target.class_counts())
    if (c == 0) return 0.5;
  return 0.0;
}

BalancedBatches::BalancedBatches(std::size_t n_source, std::size_t n_target, std::size_t batch,
                                 std::uint64_t seed)
    : n_source_(n_source), n_target_(n_target), batch_(batch), per_epoch_(0), rng_(seed) {
  if (batch == 0) throw InvalidArgument("balanced_batches: batch size must be positive");
  if (batch > n_source || batch > n_target) {
    throw InvalidArgument("balanced_batches: batch size " + std::to_string(batch) +
                          " exceeds a domain size (" + std::to_string(n_source) + ", " +
                          std::to_string(n_target) + ")");
  }
  per_epoch_ = std::min(n_source, n_target) / batch;
}

std::vector<BatchPair> BalancedBatches::next_epoch() {
  const auto src = rng_.permutation(n_source_);
  const auto tgt = rng_.permutation(n_target_);
  std::vector<BatchPair> out(per_epoch_);
  for (std::size_t b = 0; b < per_epoch_; ++b) {
    const auto lo = static_cast<std::ptrdiff_t>(b * batch_);
    const auto hi = static_cast<std::ptrdiff_t>((b + 1) * batch_);
    out[b].source.assign(src.begin() + lo, src.begin() + hi);
    out[b].target.assign(tgt.begin() + lo, tgt.begin() + hi);
  }
  return out;
}

std::vector<BatchPair> balanced_batches(const LabeledDataset& source, const LabeledDataset& target,
                                        std::size_t batch, std::uint64_t seed, std::size_t epochs) {
  BalancedBatches it(source.size(), target.size(), batch, seed);
  std::vector<BatchPair> out;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto ep = it.next_epoch();
    out.insert(out.end(), ep.begin(), ep.end());
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

LabeledDataset load_feature_csv(const std::filesystem::path& path, Domain domain,
                                std::optional<std::size_t> class_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(path, 1, "empty dataset");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "label") fail(path, 1, "header must be label,f0,...");
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] != "f" + std::to_string(c - 1)) fail(path, 1, "unexpected header column '" + std::string(header[c]) + "'");
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != dim + 1) {
      fail(path, lineno, "expected " + std::to_string(dim + 1) + " cells, found " + std::to_string(cells.size()));
    }
    long long label = 0;
    auto lr = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), label);
    if (lr.ec != std::errc() || lr.ptr != cells[0].data() + cells[0].size()) {
      fail(path, lineno, "label '" + std::string(cells[0]) + "' is not an integer");
    }
    if (label < 0 || (class_count && static_cast<std::size_t>(label) >= *class_count)) {
      fail(path, lineno, "label " + std::to_string(label) + " out of range");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t c = 1; c <= dim; ++c) {
      double v = 0.0;
      auto r = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      if (r.ec != std::errc() || r.ptr != cells[c].data() + cells[c].size() || !std::isfinite(v)) {
        fail(path, lineno, "cell '" + std::string(cells[c]) + "' is not a finite number");
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) fail(path, lineno, "empty dataset");

  LabeledDataset ds;
  ds.features = Matrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  ds.domain = domain;
  ds.class_count = class_count.value_or(
      static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1);
  return ds;
}

void save_feature_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "label";
  for (std::size_t c = 0; c < ds.dim(); ++c) out << ",f" << c;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace lmdan::data
