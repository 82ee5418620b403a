#include "lmdan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace lmdan::train {

std::string to_string(Method m) {
  switch (m) {
    case Method::lmdan: return "lmdan";
    case Method::dann: return "dann";
    case Method::source_only: return "source_only";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "lmdan") return Method::lmdan;
  if (name == "dann") return Method::dann;
  if (name == "source_only") return Method::source_only;
  throw InvalidArgument("unknown method '" + name + "' (expected lmdan, dann or source_only)");
}

std::string to_string(OtMode m) { return m == OtMode::exact ? "exact" : "sinkhorn"; }

OtMode parse_ot_mode(const std::string& name) {
  if (name == "exact") return OtMode::exact;
  if (name == "sinkhorn") return OtMode::sinkhorn;
  throw InvalidArgument("unknown ot mode '" + name + "' (expected exact or sinkhorn)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("config: epochs must be >= 1");
  if (batch < 2) throw InvalidArgument("config: batch must be >= 2");
  if (!(lr > 0.0)) throw InvalidArgument("config: lr must be positive");
  if (!(lambda >= 0.0)) throw InvalidArgument("config: lambda must be >= 0");
  if (!(alpha >= 0.0)) throw InvalidArgument("config: alpha must be >= 0");
  if (!(sinkhorn_eps > 0.0)) throw InvalidArgument("config: sinkhorn_eps must be positive");
  if (!(sinkhorn_tol > 0.0)) throw InvalidArgument("config: sinkhorn_tol must be positive");
  if (!(weight_floor > 0.0)) throw InvalidArgument("config: weight_floor must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("config: momentum must lie in [0, 1)");
}

std::vector<int> predict(const nn::Models& models, const Matrix& features) {
  const Matrix logits = nn::forward(models.classifier, nn::forward(models.encoder, features));
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    // max_element returns the first maximum, i.e. the smallest index on ties.
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Evaluation evaluate_predictions(const std::vector<int>& predicted, const data::LabeledDataset& ds) {
  if (predicted.size() != ds.size()) throw InvalidArgument("evaluate: prediction count mismatch");
  std::vector<std::size_t> hits(ds.class_count, 0), totals(ds.class_count, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = static_cast<std::size_t>(ds.labels[i]);
    ++totals[y];
    if (predicted[i] == ds.labels[i]) {
      ++hits[y];
      ++correct;
    }
  }
  Evaluation e;
  e.accuracy = ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
  double macro = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    if (totals[k] == 0) {
      e.per_class.emplace_back();
      continue;
    }
    const double r = static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
    e.per_class.emplace_back(r);
    macro += r;
    ++present;
  }
  e.macro_accuracy = present ? macro / static_cast<double>(present) : 0.0;
  return e;
}

Evaluation evaluate(const nn::Models& models, const data::LabeledDataset& ds) {
  return evaluate_predictions(predict(models, ds.features), ds);
}

namespace {

constexpr std::uint64_t kModelStream = 0;
constexpr std::uint64_t kBatchStream = 1;

nn::Models init_models(const data::LabeledDataset& source, const TrainConfig& cfg) {
  Rng rng(Rng::derive_seed(cfg.seed, kModelStream));
  return nn::make_models(source.dim(), source.class_count, cfg.arch, rng);
}

}  // namespace

Trainer::Trainer(Method method, const data::LabeledDataset& source, const Matrix& target_features,
                 const TrainConfig& cfg)
    : method_(method),
      source_(source),
      target_(target_features),
      cfg_(cfg),
      models_(),
      optimizer_(cfg.momentum),
      batches_(source.size(), target_features.rows(), cfg.batch, Rng::derive_seed(cfg.seed, kBatchStream)) {
  cfg_.validate();
  source_.validate();
  if (target_.cols() != source_.dim()) throw InvalidArgument("train: source and target feature dims differ");
  if (method_ == Method::source_only) cfg_.lambda = 0.0;
  models_ = init_models(source_, cfg_);
  total_steps_ = cfg_.epochs * batches_.batches_per_epoch();
  source_counts_ = source_.class_counts();
  weighted_mass_.assign(source_.class_count, 0.0);
}

void Trainer::reset_weighted_label_mass() { std::fill(weighted_mass_.begin(), weighted_mass_.end(), 0.0); }

std::vector<double> Trainer::batch_weights(const Matrix& xs, const std::vector<int>& ys, const Matrix& xt,
                                           StepRecord& record) const {
  auto probs = [&](const Matrix& x) {
    const Matrix logits = nn::forward(models_.classifier, nn::forward(models_.encoder, x));
    if (!logits.all_finite()) throw nn::NonFiniteLoss("non-finite classifier logits");
    return softmax_rows(logits);
  };
  const ot::CostMatrix cost = ot::build_cost_matrix(probs(xs), probs(xt));
  const auto marginals = ot::Marginals::uniform(xs.rows(), xt.rows());
  ot::TransportPlan plan;
  if (cfg_.ot_mode == OtMode::exact) {
    plan = ot::solve_exact(cost, marginals);
  } else {
    plan = ot::solve_sinkhorn(cost, marginals, {cfg_.sinkhorn_eps, cfg_.sinkhorn_max_iter, cfg_.sinkhorn_tol, true});
    if (!plan.converged) {
      throw nn::NonFiniteLoss("sinkhorn did not converge within " + std::to_string(cfg_.sinkhorn_max_iter) +
                              " iterations");
    }
  }
  record.transport_objective = plan.objective;
  const auto guide = weighting::guide_matrix(plan, cost);
  const std::span<const std::size_t> counts =
      cfg_.dataset_class_counts ? std::span<const std::size_t>(source_counts_) : std::span<const std::size_t>();
  auto w = weighting::class_weights(guide, ys, cfg_.alpha, cfg_.weight_floor, counts);
  if (cfg_.normalize_weights) w = weighting::normalize_weights(w, ys);
  record.weights = w;
  return weighting::per_sample_weights(w, ys);
}

StepRecord Trainer::step() {
  if (finished()) throw InvalidArgument("Trainer::step: run already finished");
  if (in_epoch_ == epoch_.size()) {
    epoch_ = batches_.next_epoch();
    in_epoch_ = 0;
  }
  const auto& pair = epoch_[in_epoch_++];
  const data::LabeledDataset src = source_.subset(pair.source);
  const Matrix xt = target_.gather_rows(pair.target);

  StepRecord record;
  std::vector<double> v(src.size(), 1.0);
  if (method_ == Method::lmdan) {
    auto w = batch_weights(src.features, src.labels, xt, record);
    if (!cfg_.force_unit_weights) v = std::move(w);
  }
  for (std::size_t i = 0; i < v.size(); ++i) weighted_mass_[static_cast<std::size_t>(src.labels[i])] += v[i];

  const nn::Schedule sched{static_cast<double>(step_) / static_cast<double>(total_steps_), cfg_.lr, cfg_.lambda};
  record.losses = nn::adversarial_step(models_, {src.features, src.labels, xt}, v, sched, optimizer_);
  ++step_;
  return record;
}

namespace {

std::vector<double> normalized(const std::vector<double>& mass) {
  double total = 0.0;
  for (double m : mass) total += m;
  std::vector<double> out(mass.size(), 0.0);
  if (total > 0.0)
    for (std::size_t k = 0; k < mass.size(); ++k) out[k] = mass[k] / total;
  return out;
}

}  // namespace

RunReport train(Method method, const data::LabeledDataset& source, const data::LabeledDataset& target,
                const TrainConfig& cfg) {
  if (source.class_count != target.class_count) throw InvalidArgument("train: class counts differ");
  target.validate();

  RunReport report;
  report.method = method;
  report.config = cfg;
  if (method == Method::source_only) report.config.lambda = 0.0;

  // Target labels below this line feed reporting only.
  Trainer trainer(method, source, target.features, cfg);
  const auto target_counts = target.class_counts();
  report.target_label_distribution = normalized(std::vector<double>(target_counts.begin(), target_counts.end()));
  {
    const auto sc = source.class_counts();
    report.source_target_label_kl =
        data::label_kl(std::vector<double>(sc.begin(), sc.end()),
                       std::vector<double>(target_counts.begin(), target_counts.end()),
                       data::default_smoothing(source, target));
  }

  const std::size_t per_epoch = trainer.total_steps() / cfg.epochs;
  try {
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      trainer.reset_weighted_label_mass();
      EpochRecord rec;
      StepRecord last;
      for (std::size_t s = 0; s < per_epoch; ++s) {
        last = trainer.step();
        rec.classification_loss += last.losses.classification_loss;
        rec.domain_loss += last.losses.domain_loss;
      }
      rec.classification_loss /= static_cast<double>(per_epoch);
      rec.domain_loss /= static_cast<double>(per_epoch);
      rec.weighted_label_distribution = normalized(trainer.weighted_label_mass());
      // Smoothing 0: the target distribution has full support whenever the
      // weighted source one does not vanish on it; otherwise fall back.
      try {
        rec.weighted_label_kl = data::label_kl(rec.weighted_label_distribution, report.target_label_distribution, 0.0);
      } catch (const InvalidArgument&) {
        rec.weighted_label_kl = std::numeric_limits<double>::infinity();
      }
      const Evaluation ev = evaluate(trainer.models(), target);
      rec.target_accuracy = ev.accuracy;
      report.target = ev;
      report.final_weights = last.weights.w;
      report.effective_label_distribution = rec.weighted_label_distribution;
      report.label_kl_trajectory.push_back(rec.weighted_label_kl);
      report.epochs.push_back(std::move(rec));
      report.models = trainer.models();
    }
  } catch (const nn::NonFiniteLoss& err) {
    report.aborted = true;
    report.diagnostic = std::string(err.what()) + " after " + std::to_string(trainer.steps_done()) + " steps";
  }
  return report;
}

RunReport train_lmdan(const data::LabeledDataset& source, const data::LabeledDataset& target,
                      const TrainConfig& cfg) {
  return train(Method::lmdan, source, target, cfg);
}

RunReport train_dann(const data::LabeledDataset& source, const data::LabeledDataset& target,
                     const TrainConfig& cfg) {
  return train(Method::dann, source, target, cfg);
}

RunReport train_source_only(const data::LabeledDataset& source, const data::LabeledDataset& target,
                            const TrainConfig& cfg) {
  return train(Method::source_only, source, target, cfg);
}

ReplicateSeeds expand_seed(std::uint64_t seed) {
  return {Rng::derive_seed(seed, 10), Rng::derive_seed(seed, 11), Rng::derive_seed(seed, 12),
          Rng::derive_seed(seed, 13)};
}

std::pair<data::LabeledDataset, data::LabeledDataset> drifted_blobs(const data::BlobConfig& blobs,
                                                                     const data::DriftSpec& spec,
                                                                     std::uint64_t seed) {
  const auto seeds = expand_seed(seed);
  auto [src, tgt] = data::gen_blob_pair(blobs, seeds.blobs);
  return {data::apply_drift(src, spec, seeds.source_drift), data::apply_drift(tgt, spec, seeds.target_drift)};
}

std::pair<data::LabeledDataset, data::LabeledDataset> drifted_blobs(const data::BlobConfig& blobs,
                                                                     double rate, std::uint64_t seed) {
  return drifted_blobs(blobs, data::DriftSpec::halves(blobs.class_count, rate, rate), seed);
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::size_t class_count, std::ostream& out) {
  out << "method,rate,seed,kl,accuracy";
  for (std::size_t k = 0; k < class_count; ++k) out << ",per_class_" << k;
  out << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << data::format_double(r.rate) << ',' << r.seed << ','
        << data::format_double(r.kl) << ',' << data::format_double(r.accuracy);
    for (std::size_t k = 0; k < class_count; ++k) {
      out << ',';
      if (k < r.per_class.size() && r.per_class[k]) out << data::format_double(*r.per_class[k]);
    }
    out << '\n';
  }
}

std::vector<SweepRow> drift_sweep(const SweepConfig& cfg) {
  if (cfg.rates.empty()) throw InvalidArgument("sweep: empty rate list");
  if (cfg.seeds.empty()) throw InvalidArgument("sweep: empty seed list");
  if (cfg.methods.empty()) throw InvalidArgument("sweep: empty method list");
  if (cfg.alphas.empty()) throw InvalidArgument("sweep: empty alpha list");
  cfg.train.validate();

  struct Cell {
    double rate;
    std::uint64_t seed;
    Method method;
    double alpha;
    std::string label;
  };
  std::vector<Cell> cells;
  const bool alpha_grid = cfg.alphas.size() > 1;
  for (double rate : cfg.rates)
    for (std::uint64_t seed : cfg.seeds)
      for (Method m : cfg.methods) {
        if (m == Method::lmdan) {
          for (double a : cfg.alphas) {
            std::string label = "lmdan";
            if (alpha_grid) label += "@alpha=" + data::format_double(a);
            cells.push_back({rate, seed, m, a, label});
          }
        } else {
          cells.push_back({rate, seed, m, cfg.train.alpha, to_string(m)});
        }
      }

  std::vector<SweepRow> rows(cells.size());
  auto run_cell = [&](std::size_t idx) {
    const Cell& c = cells[idx];
    const auto [src, tgt] = drifted_blobs(cfg.blobs, c.rate, c.seed);
    TrainConfig tc = cfg.train;
    tc.alpha = c.alpha;
    tc.seed = expand_seed(c.seed).training;
    const RunReport rep = train(c.method, src, tgt, tc);
    SweepRow& r = rows[idx];
    r.method = c.label;
    r.kind = c.method;
    r.alpha = c.alpha;
    r.rate = c.rate;
    r.seed = c.seed;
    r.kl = data::label_kl(src, tgt, data::default_smoothing(src, tgt));
    r.accuracy = rep.target.accuracy;
    r.per_class = rep.target.per_class;
    r.aborted = rep.aborted;
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cells.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < cells.size(); i += jobs) run_cell(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rows;
}

}  // namespace lmdan::train
