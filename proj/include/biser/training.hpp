#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "biser/common.hpp"
#include "biser/data.hpp"
#include "biser/eval.hpp"
#include "biser/log.hpp"
#include "biser/models.hpp"
#include "biser/optim.hpp"
#include "biser/propensity.hpp"

namespace biser {

enum class ModelKind { kMF, kUAE, kIAE, kBiser };

// kFixed trains against a caller-supplied propensity table (e.g. the true
// exposure of a synthetic dataset).
enum class Weighting { kNone, kRelIpw, kPreSipw, kSipw, kFixed };

enum class StopMetric { kNdcgAt3, kNdcgAt30 };

inline int cutoff(StopMetric m) { return m == StopMetric::kNdcgAt3 ? 3 : 30; }

struct TrainConfig {
  ModelKind model_kind = ModelKind::kUAE;
  Weighting weighting = Weighting::kNone;
  int hidden_dim = 100;  // latent dimension for MF
  double learning_rate = 0.1;
  double l2 = 1e-6;
  double lambda_u = 0.1;
  double lambda_i = 0.5;
  double clip_min = kDefaultClipMin;
  double eta = 0.5;
  int max_epochs = 500;
  int patience = 5;
  StopMetric early_stop_metric = StopMetric::kNdcgAt3;
  std::uint64_t seed = 0;
  int batch_size = 1024;  // MF only; autoencoders step once per row
  XavierVariant xavier = XavierVariant::kUniform;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (lambda_u < 0 || lambda_i < 0) throw ConfigError("lambda_u and lambda_i must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (l2 < 0) throw ConfigError("l2 must be >= 0");
    if ((weighting == Weighting::kSipw || weighting == Weighting::kPreSipw) &&
        !(clip_min > 0 && clip_min <= 1)) {
      throw ConfigError("SIPW requires clip_min in (0,1]");
    }
    if (weighting == Weighting::kRelIpw && !(eta > 0)) throw ConfigError("eta must be > 0");
  }

  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// key=value form of TrainConfig.

namespace detail {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

inline constexpr EnumName<ModelKind> kModelNames[] = {
    {ModelKind::kMF, "MF"}, {ModelKind::kUAE, "UAE"}, {ModelKind::kIAE, "IAE"}, {ModelKind::kBiser, "BISER"}};
inline constexpr EnumName<Weighting> kWeightingNames[] = {{Weighting::kNone, "NONE"},
                                                          {Weighting::kRelIpw, "REL_IPW"},
                                                          {Weighting::kPreSipw, "PRE_SIPW"},
                                                          {Weighting::kSipw, "SIPW"},
                                                          {Weighting::kFixed, "FIXED"}};
inline constexpr EnumName<StopMetric> kStopNames[] = {{StopMetric::kNdcgAt3, "NDCG_AT_3"},
                                                      {StopMetric::kNdcgAt30, "NDCG_AT_30"}};
inline constexpr EnumName<XavierVariant> kXavierNames[] = {{XavierVariant::kUniform, "UNIFORM"},
                                                           {XavierVariant::kNormal, "NORMAL"}};

template <typename E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const EnumName<E> (&table)[N], const std::string& key, const std::string& text) {
  for (const auto& e : table) {
    if (text == e.name) return e.value;
  }
  std::string options;
  for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
  throw ConfigError(key + ": unknown value '" + text + "' (expected one of " + options + ")");
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  if (!parse_number(text, v)) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

inline long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  if (!parse_number(text, v)) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace detail

inline const char* to_string(ModelKind k) { return detail::enum_name(detail::kModelNames, k); }
inline const char* to_string(Weighting w) { return detail::enum_name(detail::kWeightingNames, w); }
inline const char* to_string(StopMetric m) { return detail::enum_name(detail::kStopNames, m); }

inline KeyValues to_key_values(const TrainConfig& c) {
  using detail::format_double;
  return {{"model_kind", to_string(c.model_kind)},
          {"weighting", to_string(c.weighting)},
          {"hidden_dim", std::to_string(c.hidden_dim)},
          {"learning_rate", format_double(c.learning_rate)},
          {"l2", format_double(c.l2)},
          {"lambda_u", format_double(c.lambda_u)},
          {"lambda_i", format_double(c.lambda_i)},
          {"clip_min", format_double(c.clip_min)},
          {"eta", format_double(c.eta)},
          {"max_epochs", std::to_string(c.max_epochs)},
          {"patience", std::to_string(c.patience)},
          {"early_stop_metric", to_string(c.early_stop_metric)},
          {"seed", std::to_string(c.seed)},
          {"batch_size", std::to_string(c.batch_size)},
          {"xavier", detail::enum_name(detail::kXavierNames, c.xavier)}};
}

// Applies one key to a config; unknown keys are errors.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "model_kind") c.model_kind = parse_enum(kModelNames, key, value);
  else if (key == "weighting") c.weighting = parse_enum(kWeightingNames, key, value);
  else if (key == "hidden_dim") c.hidden_dim = static_cast<int>(parse_integer(key, value));
  else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
  else if (key == "l2") c.l2 = parse_double(key, value);
  else if (key == "lambda_u") c.lambda_u = parse_double(key, value);
  else if (key == "lambda_i") c.lambda_i = parse_double(key, value);
  else if (key == "clip_min") c.clip_min = parse_double(key, value);
  else if (key == "eta") c.eta = parse_double(key, value);
  else if (key == "max_epochs") c.max_epochs = static_cast<int>(parse_integer(key, value));
  else if (key == "patience") c.patience = static_cast<int>(parse_integer(key, value));
  else if (key == "early_stop_metric") c.early_stop_metric = parse_enum(kStopNames, key, value);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(key, value));
  else if (key == "batch_size") c.batch_size = static_cast<int>(parse_integer(key, value));
  else if (key == "xavier") c.xavier = parse_enum(kXavierNames, key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline TrainConfig config_from_key_values(const KeyValues& kv, TrainConfig base = {}) {
  for (const auto& [k, v] : kv) set_config_value(base, k, v);
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------

struct TrainReport {
  struct Epoch {
    int epoch = 0;
    LossBreakdown loss;
    double val_metric = 0.0;
  };
  std::vector<Epoch> epochs;
  int best_epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  double wall_time = 0.0;  // seconds; not exported
};

inline void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,sipw_loss,bu_loss,l2,total,val_metric\n";
  char buf[256];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.loss.sipw_term,
                  e.loss.bu_term, e.loss.l2_term, e.loss.total, e.val_metric);
    out << buf;
  }
}

// A trained predictor: MF, one autoencoder, or the BISER pair.
struct TrainedModel {
  ModelKind kind = ModelKind::kUAE;
  std::optional<MFParams> mf;
  std::optional<AEParams> uae;
  std::optional<AEParams> iae;

  // users x items scores; autoencoders read their inputs from `train`.
  RowMatrix scores(const Interactions& train) const {
    switch (kind) {
      case ModelKind::kMF: return mf_score_matrix(*mf);
      case ModelKind::kUAE: return ae_score_matrix(*uae, train);
      case ModelKind::kIAE: return ae_score_matrix(*iae, train);
      case ModelKind::kBiser: return predict_final(ae_score_matrix(*uae, train), ae_score_matrix(*iae, train));
    }
    return {};
  }
};

namespace detail {

// Sub-seed streams.
enum : std::uint64_t {
  kStreamEncoder = 1,
  kStreamDecoder = 2,
  kStreamOrder = 3,
  kStreamUserFactors = 4,
  kStreamItemFactors = 5,
  kStreamPartner = 16,
};

inline AEParams init_autoencoder(Orientation o, Index input_dim, const TrainConfig& cfg, std::uint64_t seed) {
  AEParams p = AEParams::zeros(o, input_dim, cfg.hidden_dim);
  p.encoder_weights = xavier_init(input_dim, cfg.hidden_dim, derive_seed(seed, kStreamEncoder), cfg.xavier);
  p.decoder_weights = xavier_init(cfg.hidden_dim, input_dim, derive_seed(seed, kStreamDecoder), cfg.xavier);
  return p;
}

// values[i][k] = scores(inter_t.row(i)[k], i) for an item-major view.
inline PairValues gather_item_major(const RowMatrix& scores, const Interactions& item_major) {
  PairValues out(item_major.rows.size());
  for (Index i = 0; i < item_major.num_users; ++i) {
    auto& row = out[static_cast<std::size_t>(i)];
    row.reserve(item_major.row(i).size());
    for (Index u : item_major.row(i)) row.push_back(scores(u, i));
  }
  return out;
}

// Tracks the early-stopping state of one run.
class EarlyStopper {
 public:
  EarlyStopper(int patience, bool has_validation) : patience_(patience), has_validation_(has_validation) {}

  // Returns true when this epoch is the new best.
  bool observe(TrainReport& report, int epoch, double metric) {
    const bool improved = !has_validation_ || metric > report.best_metric;
    if (improved) {
      report.best_metric = metric;
      report.best_epoch = epoch;
    }
    return improved;
  }

  bool should_stop(const TrainReport& report, int epoch) const {
    return has_validation_ && epoch - report.best_epoch >= patience_;
  }

 private:
  int patience_;
  bool has_validation_;
};

inline double validation_metric(const RowMatrix& scores, const DatasetSplit& split, const TrainConfig& cfg) {
  if (split.validation.nnz() == 0) return 0.0;
  return heldout_ndcg(scores, split.train, split.validation, cutoff(cfg.early_stop_metric));
}

inline void check_loss(const LossBreakdown& loss, int epoch) {
  if (!std::isfinite(loss.total)) {
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
  }
}

// Propensity weights aligned with the model's training rows.
struct RowWeights {
  PairValues omega;  // empty: omega = 1
};

inline PairValues align(const PropensityTable& table, const Interactions& rows, Orientation o) {
  return table.gather(rows, o == Orientation::kItem);
}

// One epoch of row-wise updates for an autoencoder.
inline LossBreakdown ae_epoch(AEParams& params, AEOptimizerState& state, const Interactions& rows,
                              const PairValues* omega, const PairValues* pseudo, double lambda,
                              const TrainConfig& cfg, const LossScale& scale, Rng& order_rng, int epoch) {
  std::vector<Index> order = iota_indices(rows.num_users);
  order_rng.shuffle(order);
  AEGradients grads;
  LossBreakdown total;
  total.lambda = lambda;
  for (Index r : order) {
    const auto sr = static_cast<std::size_t>(r);
    RowBatch batch;
    batch.positives = rows.row(r);
    if (omega) batch.omega = (*omega)[sr];
    if (pseudo && lambda != 0.0) batch.pseudo_labels = (*pseudo)[sr];
    try {
      total += combined_loss_and_grads_into(params, batch, lambda, cfg.l2, scale, grads);
      adagrad_step(params, grads, state, cfg.learning_rate);
    } catch (const std::runtime_error& e) {
      throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch), epoch);
    }
  }
  check_loss(total, epoch);
  return total;
}

inline std::pair<TrainedModel, TrainReport> train_autoencoder(const DatasetSplit& split, const TrainConfig& cfg,
                                                              const PropensityTable* fixed) {
  const Orientation o = cfg.model_kind == ModelKind::kUAE ? Orientation::kUser : Orientation::kItem;
  const Interactions rows = o == Orientation::kUser ? split.train : split.train.transposed();
  const Index input_dim = rows.num_items;
  const LossScale scale{static_cast<double>(split.train.num_users) * split.train.num_items,
                        std::max<double>(1.0, static_cast<double>(split.train.nnz()))};

  AEParams params = init_autoencoder(o, input_dim, cfg, cfg.seed);
  AEOptimizerState state = AEOptimizerState::for_params(params);
  Rng order_rng(derive_seed(cfg.seed, kStreamOrder));

  std::optional<PairValues> static_omega;
  if (cfg.weighting == Weighting::kRelIpw) {
    static_omega = align(popularity_propensity(item_popularity(split.train), cfg.eta, cfg.clip_min), rows, o);
  } else if (fixed) {
    static_omega = align(*fixed, rows, o);
  }

  auto wrap = [o](AEParams p) {
    TrainedModel m;
    m.kind = o == Orientation::kUser ? ModelKind::kUAE : ModelKind::kIAE;
    (o == Orientation::kUser ? m.uae : m.iae) = std::move(p);
    return m;
  };

  TrainReport report;
  EarlyStopper stopper(cfg.patience, split.validation.nnz() > 0);
  AEParams best = params;
  RowMatrix snapshot = ae_score_matrix(params, split.train);
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::optional<PairValues> epoch_omega;
    if (cfg.weighting == Weighting::kSipw) {
      const PropensityTable table = self_propensity(split.train, gather_pairs(snapshot, split.train), cfg.clip_min);
      epoch_omega = align(table, rows, o);
    }
    const PairValues* omega = epoch_omega ? &*epoch_omega : (static_omega ? &*static_omega : nullptr);
    const LossBreakdown loss = ae_epoch(params, state, rows, omega, nullptr, 0.0, cfg, scale, order_rng, epoch);
    snapshot = ae_score_matrix(params, split.train);
    const double metric = validation_metric(snapshot, split, cfg);
    report.epochs.push_back({epoch, loss, metric});
    if (stopper.observe(report, epoch, metric)) best = params;
    if (stopper.should_stop(report, epoch)) {
      report.stopped_early = true;
      break;
    }
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {wrap(std::move(best)), std::move(report)};
}

// Sparse Adagrad state for MF: one accumulator row per factor row.
struct MFOptimizerState {
  RowMatrix user_accum;
  RowMatrix item_accum;
};

inline std::pair<TrainedModel, TrainReport> train_mf(const DatasetSplit& split, const TrainConfig& cfg,
                                                     const PropensityTable* fixed) {
  const Interactions& train = split.train;
  const Index m = train.num_users;
  const Index n = train.num_items;
  const Index k = cfg.hidden_dim;
  const std::uint64_t cells = static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n);
  if (cells > (std::uint64_t{1} << 32)) throw ConfigError("MF cell enumeration limited to 2^32 pairs");
  const double num_pairs = static_cast<double>(cells);

  MFParams params;
  params.user_factors = xavier_init(m, k, derive_seed(cfg.seed, kStreamUserFactors), cfg.xavier);
  params.item_factors = xavier_init(n, k, derive_seed(cfg.seed, kStreamItemFactors), cfg.xavier);
  MFOptimizerState state{RowMatrix::Zero(m, k), RowMatrix::Zero(n, k)};
  Rng order_rng(derive_seed(cfg.seed, kStreamOrder));

  // Positive-cell lookup: omega of each training positive, 0 elsewhere.
  std::vector<float> label(static_cast<std::size_t>(cells), 0.0f);
  std::vector<double> omega_of_cell;
  auto fill_omega = [&](const PropensityTable* table) {
    omega_of_cell.assign(static_cast<std::size_t>(cells), 1.0);
    if (!table) return;
    for (Index u = 0; u < m; ++u) {
      for (Index i : train.row(u)) {
        omega_of_cell[static_cast<std::size_t>(u) * n + i] = table->at(u, i);
      }
    }
  };
  for (Index u = 0; u < m; ++u) {
    for (Index i : train.row(u)) label[static_cast<std::size_t>(u) * n + i] = 1.0f;
  }
  std::optional<PropensityTable> static_table;
  if (cfg.weighting == Weighting::kRelIpw) {
    static_table = popularity_propensity(item_popularity(train), cfg.eta, cfg.clip_min);
  }
  fill_omega(static_table ? &*static_table : fixed);

  std::vector<std::uint32_t> order(static_cast<std::size_t>(cells));
  for (std::uint64_t c = 0; c < cells; ++c) order[c] = static_cast<std::uint32_t>(c);

  RowMatrix grad_u = RowMatrix::Zero(m, k);
  RowMatrix grad_i = RowMatrix::Zero(n, k);
  std::vector<char> touched_u(static_cast<std::size_t>(m), 0), touched_i(static_cast<std::size_t>(n), 0);
  std::vector<Index> list_u, list_i;

  TrainReport report;
  EarlyStopper stopper(cfg.patience, split.validation.nnz() > 0);
  MFParams best = params;
  RowMatrix snapshot = mf_score_matrix(params);
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.weighting == Weighting::kSipw) {
      const PropensityTable table = self_propensity(train, gather_pairs(snapshot, train), cfg.clip_min);
      fill_omega(&table);
    }
    order_rng.shuffle(order);
    LossBreakdown loss;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      list_u.clear();
      list_i.clear();
      for (std::size_t b = begin; b < end; ++b) {
        const std::uint32_t cell = order[b];
        const Index u = static_cast<Index>(cell / static_cast<std::uint32_t>(n));
        const Index i = static_cast<Index>(cell % static_cast<std::uint32_t>(n));
        const double y = label[cell];
        const double w = omega_of_cell[cell];
        const double r = sigmoid(params.user_factors.row(u).dot(params.item_factors.row(i)));
        loss.sipw_term += sipw_loss(y, r, w) / num_pairs;
        const double dz = sipw_loss_derivative(y, r, w) * r * (1.0 - r) / num_pairs;
        if (!touched_u[static_cast<std::size_t>(u)]) {
          touched_u[static_cast<std::size_t>(u)] = 1;
          list_u.push_back(u);
        }
        if (!touched_i[static_cast<std::size_t>(i)]) {
          touched_i[static_cast<std::size_t>(i)] = 1;
          list_i.push_back(i);
        }
        grad_u.row(u) += dz * params.item_factors.row(i);
        grad_i.row(i) += dz * params.user_factors.row(u);
      }
      for (Index u : list_u) {
        loss.l2_term += 0.5 * cfg.l2 * params.user_factors.row(u).squaredNorm();
        grad_u.row(u) += cfg.l2 * params.user_factors.row(u);
      }
      for (Index i : list_i) {
        loss.l2_term += 0.5 * cfg.l2 * params.item_factors.row(i).squaredNorm();
        grad_i.row(i) += cfg.l2 * params.item_factors.row(i);
      }
      for (Index u : list_u) {
        if (!grad_u.row(u).allFinite()) {
          throw DivergenceError("non-finite MF gradient at epoch " + std::to_string(epoch), epoch);
        }
        adagrad_update(params.user_factors.row(u), grad_u.row(u), state.user_accum.row(u), cfg.learning_rate);
        grad_u.row(u).setZero();
        touched_u[static_cast<std::size_t>(u)] = 0;
      }
      for (Index i : list_i) {
        if (!grad_i.row(i).allFinite()) {
          throw DivergenceError("non-finite MF gradient at epoch " + std::to_string(epoch), epoch);
        }
        adagrad_update(params.item_factors.row(i), grad_i.row(i), state.item_accum.row(i), cfg.learning_rate);
        grad_i.row(i).setZero();
        touched_i[static_cast<std::size_t>(i)] = 0;
      }
    }
    loss.total = loss.sipw_term + loss.l2_term;
    check_loss(loss, epoch);
    snapshot = mf_score_matrix(params);
    const double metric = validation_metric(snapshot, split, cfg);
    report.epochs.push_back({epoch, loss, metric});
    if (stopper.observe(report, epoch, metric)) best = params;
    if (stopper.should_stop(report, epoch)) {
      report.stopped_early = true;
      break;
    }
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  TrainedModel model;
  model.kind = ModelKind::kMF;
  model.mf = std::move(best);
  return {std::move(model), std::move(report)};
}

}  // namespace detail

// Trains MF, UAE or IAE under the configured weighting. PRE_SIPW first trains
// an identical unweighted model, freezes its clipped predictions on the
// training positives as propensities and retrains from scratch. `fixed` is
// required for, and only used by, Weighting::kFixed.
inline std::pair<TrainedModel, TrainReport> train_single(const DatasetSplit& split, const TrainConfig& cfg,
                                                         const PropensityTable* fixed = nullptr) {
  cfg.validate();
  if (cfg.model_kind == ModelKind::kBiser) throw ConfigError("train_single does not train BISER");
  if (cfg.weighting == Weighting::kFixed && !fixed) throw ConfigError("FIXED weighting needs a propensity table");
  if (cfg.weighting != Weighting::kFixed) fixed = nullptr;

  std::optional<PropensityTable> pretrained;
  if (cfg.weighting == Weighting::kPreSipw) {
    TrainConfig phase1 = cfg;
    phase1.weighting = Weighting::kNone;
    auto [model, report] = train_single(split, phase1);
    const RowMatrix scores = model.scores(split.train);
    pretrained = self_propensity(split.train, gather_pairs(scores, split.train), cfg.clip_min);
    fixed = &*pretrained;
  }
  TrainConfig run = cfg;
  if (pretrained) run.weighting = Weighting::kFixed;
  auto result = cfg.model_kind == ModelKind::kMF ? detail::train_mf(split, run, fixed)
                                                 : detail::train_autoencoder(split, run, fixed);
  return result;
}

// Algorithm: per epoch, snapshot both autoencoders, derive each one's SIPW
// table from its own snapshot, update UAE over all users with the IAE
// snapshot as detached pseudo-labels, then IAE over all items with the UAE
// snapshot. Early stopping watches the averaged predictor.
//
// Epoch loss rows report the sum of both models' terms with bu_term already
// lambda-weighted (lambda recorded as 1).
inline std::pair<TrainedModel, TrainReport> train_biser(const DatasetSplit& split, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.model_kind != ModelKind::kBiser) throw ConfigError("train_biser expects model_kind=BISER");
  if (cfg.weighting == Weighting::kPreSipw || cfg.weighting == Weighting::kFixed) {
    throw ConfigError("BISER supports weighting NONE, REL_IPW or SIPW");
  }
  const Interactions& user_rows = split.train;
  const Interactions item_rows = split.train.transposed();
  const LossScale scale{static_cast<double>(split.train.num_users) * split.train.num_items,
                        std::max<double>(1.0, static_cast<double>(split.train.nnz()))};

  const std::uint64_t item_seed = derive_seed(cfg.seed, detail::kStreamPartner);
  AEParams uae = detail::init_autoencoder(Orientation::kUser, user_rows.num_items, cfg, cfg.seed);
  AEParams iae = detail::init_autoencoder(Orientation::kItem, item_rows.num_items, cfg, item_seed);
  AEOptimizerState uae_state = AEOptimizerState::for_params(uae);
  AEOptimizerState iae_state = AEOptimizerState::for_params(iae);
  Rng uae_order(derive_seed(cfg.seed, detail::kStreamOrder));
  Rng iae_order(derive_seed(item_seed, detail::kStreamOrder));

  std::optional<PairValues> rel_u, rel_i;
  if (cfg.weighting == Weighting::kRelIpw) {
    const PropensityTable table = popularity_propensity(item_popularity(split.train), cfg.eta, cfg.clip_min);
    rel_u = detail::align(table, user_rows, Orientation::kUser);
    rel_i = detail::align(table, item_rows, Orientation::kItem);
  }

  TrainReport report;
  detail::EarlyStopper stopper(cfg.patience, split.validation.nnz() > 0);
  AEParams best_u = uae, best_i = iae;
  RowMatrix snap_u = ae_score_matrix(uae, split.train);
  RowMatrix snap_i = ae_score_matrix(iae, split.train);
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::optional<PairValues> sipw_u, sipw_i;
    if (cfg.weighting == Weighting::kSipw) {
      sipw_u = detail::align(self_propensity(split.train, gather_pairs(snap_u, split.train), cfg.clip_min),
                             user_rows, Orientation::kUser);
      sipw_i = detail::align(self_propensity(split.train, gather_pairs(snap_i, split.train), cfg.clip_min),
                             item_rows, Orientation::kItem);
    }
    const PairValues* omega_u = sipw_u ? &*sipw_u : (rel_u ? &*rel_u : nullptr);
    const PairValues* omega_i = sipw_i ? &*sipw_i : (rel_i ? &*rel_i : nullptr);
    const PairValues pseudo_for_u = gather_pairs(snap_i, user_rows);
    const PairValues pseudo_for_i = detail::gather_item_major(snap_u, item_rows);

    const LossBreakdown lu = detail::ae_epoch(uae, uae_state, user_rows, omega_u, &pseudo_for_u, cfg.lambda_u,
                                              cfg, scale, uae_order, epoch);
    const LossBreakdown li = detail::ae_epoch(iae, iae_state, item_rows, omega_i, &pseudo_for_i, cfg.lambda_i,
                                              cfg, scale, iae_order, epoch);
    LossBreakdown loss;
    loss.sipw_term = lu.sipw_term + li.sipw_term;
    loss.bu_term = cfg.lambda_u * lu.bu_term + cfg.lambda_i * li.bu_term;
    loss.l2_term = lu.l2_term + li.l2_term;
    loss.lambda = 1.0;
    loss.total = loss.sipw_term + loss.bu_term + loss.l2_term;

    snap_u = ae_score_matrix(uae, split.train);
    snap_i = ae_score_matrix(iae, split.train);
    const double metric = detail::validation_metric(predict_final(snap_u, snap_i), split, cfg);
    report.epochs.push_back({epoch, loss, metric});
    if (stopper.observe(report, epoch, metric)) {
      best_u = uae;
      best_i = iae;
    }
    if (stopper.should_stop(report, epoch)) {
      report.stopped_early = true;
      break;
    }
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  TrainedModel model;
  model.kind = ModelKind::kBiser;
  model.uae = std::move(best_u);
  model.iae = std::move(best_i);
  return {std::move(model), std::move(report)};
}

inline std::pair<TrainedModel, TrainReport> train(const DatasetSplit& split, const TrainConfig& cfg,
                                                  const PropensityTable* fixed = nullptr) {
  return cfg.model_kind == ModelKind::kBiser ? train_biser(split, cfg) : train_single(split, cfg, fixed);
}

// ---------------------------------------------------------------------------
// Grid search. An empty field keeps the base config's value.

struct GridSpec {
  std::vector<int> hidden_dims;
  std::vector<double> learning_rates;
  std::vector<double> l2s;
  std::vector<double> lambda_us;
  std::vector<double> lambda_is;
  std::vector<double> clip_mins;
  std::vector<double> etas;
};

struct GridResult {
  TrainConfig config;
  bool ok = false;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = 0;
  int epochs_run = 0;
  std::string error;
};

struct GridOutcome {
  TrainConfig best;
  std::vector<GridResult> table;
};

// Cartesian product in lexicographic order of (hidden_dim, learning_rate,
// l2, lambda_u, lambda_i, clip_min, eta).
inline std::vector<TrainConfig> expand_grid(const TrainConfig& base, const GridSpec& grid) {
  auto or_base = [](auto values, auto fallback) {
    using V = std::decay_t<decltype(values)>;
    return values.empty() ? V{fallback} : values;
  };
  std::vector<TrainConfig> out;
  for (int h : or_base(grid.hidden_dims, base.hidden_dim))
    for (double lr : or_base(grid.learning_rates, base.learning_rate))
      for (double l2 : or_base(grid.l2s, base.l2))
        for (double lu : or_base(grid.lambda_us, base.lambda_u))
          for (double li : or_base(grid.lambda_is, base.lambda_i))
            for (double clip : or_base(grid.clip_mins, base.clip_min))
              for (double eta : or_base(grid.etas, base.eta)) {
                TrainConfig c = base;
                c.hidden_dim = h;
                c.learning_rate = lr;
                c.l2 = l2;
                c.lambda_u = lu;
                c.lambda_i = li;
                c.clip_min = clip;
                c.eta = eta;
                out.push_back(c);
              }
  return out;
}

// Runs every configuration (up to `jobs` at a time) and selects the best
// validation metric; ties keep the earliest configuration. Failed runs are
// recorded and skipped.
inline GridOutcome grid_search(const DatasetSplit& split, const TrainConfig& base, const GridSpec& grid,
                               int jobs = 1, const PropensityTable* fixed = nullptr) {
  const std::vector<TrainConfig> configs = expand_grid(base, grid);
  std::vector<GridResult> table(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < configs.size(); k = next++) {
      GridResult& r = table[k];
      r.config = configs[k];
      try {
        auto [model, report] = train(split, configs[k], fixed);
        r.ok = true;
        r.val_metric = report.best_metric;
        r.best_epoch = report.best_epoch;
        r.epochs_run = static_cast<int>(report.epochs.size());
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  GridOutcome outcome;
  outcome.table = std::move(table);
  const GridResult* best = nullptr;
  for (const auto& r : outcome.table) {
    if (r.ok && (!best || r.val_metric > best->val_metric)) best = &r;
  }
  if (!best) throw ConfigError("grid search: every configuration failed");
  outcome.best = best->config;
  return outcome;
}

}  // namespace biser
