// Command-line driver: prepare, train, evaluate, grid, synth, report.
//
// Every command reads a flat key=value manifest (sections data., train.,
// eval., grid., synth., report.) that flags override. Outputs are CSV or
// key=value text and contain nothing run-dependent besides (manifest, seed).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biser/biser.hpp"

namespace fs = std::filesystem;
using namespace biser;

namespace {

enum ExitCode { kOk = 0, kOtherError = 1, kConfigError = 2, kDataError = 3, kDivergence = 4 };

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"seed", "out"};
    for (const char* s : {"format", "train_path", "test_path", "path", "num_users", "num_items", "separator",
                          "skip_header", "threshold", "min_user_deg", "min_item_deg", "test_frac", "val_frac",
                          "protocol", "split_dir"})
      k.insert(std::string("data.") + s);
    for (const auto& [key, value] : to_key_values(TrainConfig{})) k.insert("train." + key);
    k.insert("train.propensity_file");
    for (const char* s : {"model_dir", "schemes", "metrics", "cutoffs", "gamma", "clip_min", "self_normalize",
                          "item_precision_cutoffs", "correlation", "per_user"})
      k.insert(std::string("eval.") + s);
    for (const char* s : {"hidden_dim", "learning_rate", "l2", "lambda_u", "lambda_i", "clip_min", "eta", "jobs"})
      k.insert(std::string("grid.") + s);
    for (const char* s : {"num_users", "num_items", "latent_rank", "popularity_exponent", "relevance_scale",
                          "relevance_offset", "exposure"})
      k.insert(std::string("synth.") + s);
    for (const char* s : {"a", "b", "scheme", "metric", "n"}) k.insert(std::string("report.") + s);
    return k;
  }();
  return keys;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

class Manifest {
 public:
  explicit Manifest(KeyValues kv) : kv_(std::move(kv)) {
    for (const auto& [k, v] : kv_) {
      if (!known_keys().count(k)) throw ConfigError("unknown manifest key '" + k + "'");
    }
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    double v = 0;
    if (!detail::parse_number(kv_.at(key), v)) throw ConfigError(key + ": expected a number");
    return v;
  }

  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    long long v = 0;
    if (!detail::parse_number(kv_.at(key), v)) throw ConfigError(key + ": expected an integer");
    return v;
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = kv_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false");
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed", 0)); }

  // Keys of one section with the prefix stripped.
  KeyValues section(const std::string& prefix) const {
    KeyValues out;
    for (const auto& [k, v] : kv_) {
      if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
    }
    return out;
  }

 private:
  KeyValues kv_;
};

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string unescape_separator(const std::string& s) {
  if (s == "\\t" || s == "tab") return "\t";
  if (s == "space") return " ";
  return s;
}

// ---------------------------------------------------------------------------

void cmd_prepare(const Manifest& m, const fs::path& out) {
  const std::string format = m.str("data.format", "TRIPLETS");
  const double val_frac = m.num("data.val_frac", 0.3);
  const std::uint64_t seed = m.seed();
  DatasetSplit split;
  KeyValues info{{"format", format}, {"seed", std::to_string(seed)}};

  auto log_stats = [&](const std::string& stage, const Interactions& inter) {
    log_info(stage + ": " + std::to_string(inter.num_users) + " users, " + std::to_string(inter.num_items) +
             " items, " + std::to_string(inter.nnz()) + " interactions, sparsity " + format_value(sparsity(inter)));
    info[stage + "_users"] = std::to_string(inter.num_users);
    info[stage + "_items"] = std::to_string(inter.num_items);
    info[stage + "_interactions"] = std::to_string(inter.nnz());
  };

  if (format == "DENSE_ASCII") {
    const auto users = static_cast<Index>(m.integer("data.num_users", -1));
    const auto items = static_cast<Index>(m.integer("data.num_items", -1));
    if (users <= 0 || items <= 0) throw ConfigError("DENSE_ASCII needs data.num_users and data.num_items");
    const int threshold = static_cast<int>(m.integer("data.threshold", 4));
    const Interactions train = binarize(load_dense_ascii(m.require("data.train_path"), users, items), threshold);
    log_stats("train_binarized", train);
    const std::string protocol = m.str("data.protocol", "MAR_TEST");
    if (protocol == "MAR_TEST") {
      const RatingMatrix test = load_dense_ascii(m.require("data.test_path"), users, items);
      split = make_mar_split(train, test, threshold, val_frac, seed);
    } else if (protocol == "MNAR_TEST") {
      split = split_holdout(train, m.num("data.test_frac", 0.2), val_frac, seed);
    } else {
      throw ConfigError("data.protocol must be MAR_TEST or MNAR_TEST");
    }
  } else if (format == "TRIPLETS") {
    const auto raw = load_triplets(m.require("data.path"), unescape_separator(m.str("data.separator", "\\t")),
                                   m.flag("data.skip_header", false));
    const RatingLog log = compact_ids(raw);
    log_info("raw: " + std::to_string(log.num_users) + " users, " + std::to_string(log.num_items) + " items, " +
             std::to_string(log.entries.size()) + " ratings");
    info["raw_users"] = std::to_string(log.num_users);
    info["raw_items"] = std::to_string(log.num_items);
    info["raw_ratings"] = std::to_string(log.entries.size());
    const Interactions binary = binarize(log, m.num("data.threshold", 4.0));
    log_stats("binarized", binary);
    const Interactions filtered = filter_core(binary, static_cast<int>(m.integer("data.min_user_deg", 0)),
                                              static_cast<int>(m.integer("data.min_item_deg", 0)));
    log_stats("filtered", filtered);
    if (m.str("data.protocol", "MNAR_TEST") != "MNAR_TEST") throw ConfigError("TRIPLETS data supports MNAR_TEST only");
    split = split_holdout(filtered, m.num("data.test_frac", 0.2), val_frac, seed);
  } else {
    throw ConfigError("data.format must be DENSE_ASCII or TRIPLETS");
  }
  save_split(out, split, info);
  log_info("split written to " + out.string() + " (" + std::to_string(split.train.nnz()) + " train, " +
           std::to_string(split.validation.nnz()) + " validation, " + std::to_string(split.test.nnz()) + " test)");
}

fs::path split_dir(const Manifest& m) {
  const fs::path dir = m.require("data.split_dir");
  if (!fs::exists(dir / "split.manifest")) throw DataError("no prepared split in " + dir.string());
  return dir;
}

TrainConfig train_config(const Manifest& m) {
  KeyValues kv = m.section("train.");
  kv.erase("propensity_file");
  if (!kv.count("seed")) kv["seed"] = std::to_string(m.seed());
  return config_from_key_values(kv);
}

// item<TAB>value lines, as written by dump_item_propensities.
PropensityTable read_item_propensities(const fs::path& path, Index num_items) {
  std::vector<double> values(static_cast<std::size_t>(num_items), -1.0);
  std::ifstream in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(detail::trim(line), "\t");
    if (fields.size() == 1 && fields[0].empty()) continue;
    Index item = 0;
    double v = 0;
    if (fields.size() != 2 || !detail::parse_number(fields[0], item) || !detail::parse_number(fields[1], v) ||
        item < 0 || item >= num_items) {
      throw DataError(detail::location(path, line_no) + ": expected item<TAB>propensity");
    }
    values[static_cast<std::size_t>(item)] = v;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0) throw DataError(path.string() + ": no propensity for item " + std::to_string(i));
  }
  return PropensityTable::per_item(std::move(values), 0.0);
}

void write_checkpoint(const fs::path& path, Checkpoint c, const DatasetSplit& split) {
  c.meta["num_users"] = std::to_string(split.train.num_users);
  c.meta["num_items"] = std::to_string(split.train.num_items);
  save_checkpoint(path, c);
}

void cmd_train(const Manifest& m, const fs::path& out) {
  const DatasetSplit split = load_split(split_dir(m));
  const TrainConfig cfg = train_config(m);
  std::optional<PropensityTable> fixed;
  if (m.has("train.propensity_file")) fixed = read_item_propensities(m.require("train.propensity_file"), split.train.num_items);
  if (cfg.weighting == Weighting::kFixed && !fixed) throw ConfigError("FIXED weighting needs train.propensity_file");

  log_info(std::string("training ") + to_string(cfg.model_kind) + " with " + to_string(cfg.weighting));
  auto [model, report] = train(split, cfg, fixed ? &*fixed : nullptr);
  log_info("best epoch " + std::to_string(report.best_epoch) + " of " + std::to_string(report.epochs.size()) +
           ", validation NDCG " + format_value(report.best_metric) + ", " + format_value(report.wall_time) + " s");

  write_key_values(out / "config.kv", to_key_values(cfg));
  write_report_csv(out / "train_report.csv", report);
  write_key_values(out / "summary.kv", {{"best_epoch", std::to_string(report.best_epoch)},
                                        {"best_metric", detail::format_double(report.best_metric)},
                                        {"epochs_run", std::to_string(report.epochs.size())},
                                        {"stopped_early", report.stopped_early ? "true" : "false"}});
  if (model.mf) write_checkpoint(out / "model.ckpt", to_checkpoint(*model.mf), split);
  if (model.kind == ModelKind::kBiser) {
    write_checkpoint(out / "uae.ckpt", to_checkpoint(*model.uae), split);
    write_checkpoint(out / "iae.ckpt", to_checkpoint(*model.iae), split);
  } else if (model.uae) {
    write_checkpoint(out / "model.ckpt", to_checkpoint(*model.uae), split);
  } else if (model.iae) {
    write_checkpoint(out / "model.ckpt", to_checkpoint(*model.iae), split);
  }
}

void check_shape(const Checkpoint& c, const fs::path& path, const DatasetSplit& split) {
  const std::string users = c.meta.count("num_users") ? c.meta.at("num_users") : "?";
  const std::string items = c.meta.count("num_items") ? c.meta.at("num_items") : "?";
  if (users != std::to_string(split.train.num_users) || items != std::to_string(split.train.num_items)) {
    throw DataError("checkpoint " + path.string() + " was trained on " + users + "x" + items +
                    " data but the split is " + std::to_string(split.train.num_users) + "x" +
                    std::to_string(split.train.num_items));
  }
}

TrainedModel load_model(const fs::path& dir, const DatasetSplit& split) {
  const TrainConfig cfg = config_from_key_values(read_key_values(dir / "config.kv"));
  TrainedModel model;
  model.kind = cfg.model_kind;
  auto load = [&](const char* name) {
    const fs::path path = dir / name;
    Checkpoint c = load_checkpoint(path);
    check_shape(c, path, split);
    return c;
  };
  switch (cfg.model_kind) {
    case ModelKind::kMF: model.mf = mf_from_checkpoint(load("model.ckpt")); break;
    case ModelKind::kUAE: model.uae = ae_from_checkpoint(load("model.ckpt")); break;
    case ModelKind::kIAE: model.iae = ae_from_checkpoint(load("model.ckpt")); break;
    case ModelKind::kBiser:
      model.uae = ae_from_checkpoint(load("uae.ckpt"));
      model.iae = ae_from_checkpoint(load("iae.ckpt"));
      break;
  }
  return model;
}

Metric parse_metric(const std::string& s) {
  if (s == "NDCG") return Metric::kNdcg;
  if (s == "MAP") return Metric::kMap;
  if (s == "RECALL") return Metric::kRecall;
  throw ConfigError("unknown metric '" + s + "' (expected NDCG, MAP or RECALL)");
}

Scheme parse_scheme(const std::string& s) {
  if (s == "AOA") return Scheme::kAoa;
  if (s == "UNBIASED") return Scheme::kUnbiased;
  throw ConfigError("unknown scheme '" + s + "' (expected AOA or UNBIASED)");
}

std::vector<int> parse_cutoffs(const std::string& text, const std::string& key) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) {
    long long v = 0;
    if (!detail::parse_number(s, v) || v < 1) throw ConfigError(key + ": cutoffs must be positive integers");
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw ConfigError(key + " must not be empty");
  return out;
}

void cmd_evaluate(const Manifest& m, const fs::path& out) {
  const DatasetSplit split = load_split(split_dir(m));
  const TrainedModel model = load_model(m.require("eval.model_dir"), split);
  const RowMatrix scores = model.scores(split.train);

  const std::string default_cutoffs = split.protocol == Protocol::kMarTest ? "1,3,5" : "10,30,50";
  const std::vector<int> cutoffs = parse_cutoffs(m.str("eval.cutoffs", default_cutoffs), "eval.cutoffs");
  const int max_n = *std::max_element(cutoffs.begin(), cutoffs.end());
  std::vector<Scheme> schemes;
  for (const auto& s : split_list(m.str("eval.schemes", "AOA"))) schemes.push_back(parse_scheme(s));
  std::vector<Metric> metrics;
  for (const auto& s : split_list(m.str("eval.metrics", "NDCG,MAP,RECALL"))) metrics.push_back(parse_metric(s));
  if (schemes.empty() || metrics.empty()) throw ConfigError("eval.schemes and eval.metrics must not be empty");

  const auto rankings = rank_all(scores, split.test_candidates, max_n);
  const ItemStats stats = item_popularity(split.train);
  const double clip = m.num("eval.clip_min", kDefaultClipMin);
  const PropensityTable propensity = eval_propensity(stats, m.num("eval.gamma", 2.0), clip);
  const bool self_normalize = m.flag("eval.self_normalize", false);

  std::vector<MetricReport> reports;
  for (Scheme s : schemes) {
    for (Metric metric : metrics) {
      reports.push_back(s == Scheme::kAoa
                            ? aoa_evaluate(rankings, split.test, metric, cutoffs)
                            : unbiased_evaluate(rankings, split.test, propensity, metric, cutoffs, self_normalize, clip));
    }
  }
  auto csv = open_output(out / "metrics.csv");
  csv << "scheme,metric,n,value,stderr,num_users\n";
  for (const auto& r : reports) {
    for (const auto& e : r.entries) {
      csv << to_string(r.scheme) << ',' << to_string(r.metric) << ',' << e.n << ',' << format_value(e.value) << ','
          << format_value(e.std_error) << ',' << e.per_user.size() << '\n';
    }
  }
  if (m.flag("eval.per_user", true)) {
    auto pu = open_output(out / "per_user.csv");
    pu << "scheme,metric,n,user,value\n";
    for (const auto& r : reports) {
      for (const auto& e : r.entries) {
        for (std::size_t k = 0; k < e.users.size(); ++k) {
          pu << to_string(r.scheme) << ',' << to_string(r.metric) << ',' << e.n << ',' << e.users[k] << ','
             << detail::format_double(e.per_user[k]) << '\n';
        }
      }
    }
  }
  if (m.has("eval.item_precision_cutoffs")) {
    const auto groups = popularity_groups(stats);
    auto ip = open_output(out / "item_precision.csv");
    ip << "scheme,metric,n,group,value,stderr,num_users\n";
    for (int n : parse_cutoffs(m.require("eval.item_precision_cutoffs"), "eval.item_precision_cutoffs")) {
      const auto precision = item_precision_at(rank_all(scores, split.test_candidates, n), split.test, n);
      for (std::size_t g = 0; g < 3; ++g) {
        std::vector<double> values;
        for (std::size_t i = 0; i < precision.size(); ++i) {
          if (precision[i] && static_cast<std::size_t>(groups.membership[i]) == g) values.push_back(*precision[i]);
        }
        MetricReport::Entry e;
        e.per_user = values;
        detail::finish_entry(e);
        ip << "AOA,ITEM_PRECISION," << n << ',' << to_string(static_cast<PopularityGroup>(g)) << ','
           << format_value(e.value) << ',' << format_value(e.std_error) << ',' << values.size() << '\n';
      }
    }
    auto gs = open_output(out / "popularity_groups.csv");
    gs << "group,num_items,mass,max_count\n";
    const int max_counts[3] = {groups.tail_max_count, groups.mid_max_count, stats.max_count};
    for (std::size_t g = 0; g < 3; ++g) {
      gs << to_string(static_cast<PopularityGroup>(g)) << ',' << groups.sizes[g] << ',' << groups.mass[g] << ','
         << max_counts[g] << '\n';
    }
  }
  if (m.flag("eval.correlation", false)) {
    const auto corr = popularity_prediction_correlation(scores, split.train);
    auto cc = open_output(out / "correlation.csv");
    cc << "statistic,value\n";
    cc << "pearson_popularity_prediction," << (corr ? format_value(*corr) : std::string("nan")) << '\n';
    auto sc = open_output(out / "popularity_scatter.csv");
    sc << "item,popularity,mean_prediction\n";
    std::vector<double> sum(static_cast<std::size_t>(split.train.num_items), 0.0);
    for (Index u = 0; u < split.train.num_users; ++u)
      for (Index i : split.train.row(u)) sum[static_cast<std::size_t>(i)] += scores(u, i);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      if (stats.counts[i] > 0) sc << i << ',' << stats.counts[i] << ',' << format_value(sum[i] / stats.counts[i]) << '\n';
    }
  }
  for (const auto& r : reports) {
    for (const auto& e : r.entries) {
      log_info(std::string(to_string(r.scheme)) + " " + to_string(r.metric) + "@" + std::to_string(e.n) + " = " +
               format_value(e.value));
    }
  }
}

std::vector<double> grid_doubles(const Manifest& m, const std::string& key) {
  if (!m.has(key)) return {};
  std::vector<double> out;
  for (const auto& s : split_list(m.str(key, ""))) {
    double v = 0;
    if (!detail::parse_number(s, v)) throw ConfigError(key + ": '" + s + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + " is empty");
  return out;
}

void cmd_grid(const Manifest& m, const fs::path& out, int jobs) {
  const DatasetSplit split = load_split(split_dir(m));
  const TrainConfig base = train_config(m);
  GridSpec grid;
  for (double v : grid_doubles(m, "grid.hidden_dim")) grid.hidden_dims.push_back(static_cast<int>(v));
  grid.learning_rates = grid_doubles(m, "grid.learning_rate");
  grid.l2s = grid_doubles(m, "grid.l2");
  grid.lambda_us = grid_doubles(m, "grid.lambda_u");
  grid.lambda_is = grid_doubles(m, "grid.lambda_i");
  grid.clip_mins = grid_doubles(m, "grid.clip_min");
  grid.etas = grid_doubles(m, "grid.eta");
  if (jobs <= 0) jobs = static_cast<int>(m.integer("grid.jobs", 1));
  std::optional<PropensityTable> fixed;
  if (m.has("train.propensity_file")) fixed = read_item_propensities(m.require("train.propensity_file"), split.train.num_items);

  const GridOutcome outcome = grid_search(split, base, grid, jobs, fixed ? &*fixed : nullptr);
  auto csv = open_output(out / "grid.csv");
  csv << "hidden_dim,learning_rate,l2,lambda_u,lambda_i,clip_min,eta,status,val_metric,best_epoch,epochs_run,error\n";
  for (const auto& r : outcome.table) {
    const auto& c = r.config;
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    csv << c.hidden_dim << ',' << format_value(c.learning_rate) << ',' << format_value(c.l2) << ','
        << format_value(c.lambda_u) << ',' << format_value(c.lambda_i) << ',' << format_value(c.clip_min) << ','
        << format_value(c.eta) << ',' << (r.ok ? "ok" : "failed") << ',' << format_value(r.val_metric) << ','
        << r.best_epoch << ',' << r.epochs_run << ',' << error << '\n';
  }
  write_key_values(out / "best_config.kv", to_key_values(outcome.best));
  log_info(std::to_string(outcome.table.size()) + " configurations evaluated");
}

void cmd_synth(const Manifest& m, const fs::path& out) {
  SynthConfig cfg;
  cfg.num_users = static_cast<Index>(m.integer("synth.num_users", cfg.num_users));
  cfg.num_items = static_cast<Index>(m.integer("synth.num_items", cfg.num_items));
  cfg.latent_rank = static_cast<Index>(m.integer("synth.latent_rank", cfg.latent_rank));
  cfg.popularity_exponent = m.num("synth.popularity_exponent", cfg.popularity_exponent);
  cfg.relevance_scale = m.num("synth.relevance_scale", cfg.relevance_scale);
  cfg.relevance_offset = m.num("synth.relevance_offset", cfg.relevance_offset);
  const std::string exposure = m.str("synth.exposure", "PER_ITEM");
  if (exposure == "PER_PAIR") cfg.exposure = ExposureMode::kPerPair;
  else if (exposure != "PER_ITEM") throw ConfigError("synth.exposure must be PER_ITEM or PER_PAIR");
  cfg.seed = m.seed();

  const SynthGroundTruth gt = generate_ground_truth(cfg);
  const Interactions clicks = sample_clicks(gt, derive_seed(cfg.seed, 3));
  dump_synthetic(out, gt, clicks);
  PropensityTable exposure_table = true_propensity(gt);
  dump_item_propensities(out / "item_exposure.tsv", exposure_table);
  write_key_values(out / "synth.manifest",
                   {{"num_users", std::to_string(cfg.num_users)},
                    {"num_items", std::to_string(cfg.num_items)},
                    {"latent_rank", std::to_string(cfg.latent_rank)},
                    {"popularity_exponent", detail::format_double(cfg.popularity_exponent)},
                    {"exposure", exposure},
                    {"seed", std::to_string(cfg.seed)},
                    {"clicks", std::to_string(clicks.nnz())},
                    {"relevant", std::to_string(relevant_pairs(gt).nnz())}});
  log_info("synthetic data: " + std::to_string(clicks.nnz()) + " clicks, mean relevance " + format_value(gt.rho.mean()));
}

std::map<Index, double> read_per_user(const fs::path& path, const std::string& scheme, const std::string& metric, int n) {
  std::ifstream in = detail::open_input(path);
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != "scheme,metric,n,user,value") throw DataError(path.string() + ": not a per-user CSV");
  std::map<Index, double> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = detail::split_fields(detail::trim(line), ",");
    if (f.size() != 5) continue;
    int cutoff = 0;
    Index user = 0;
    double value = 0;
    if (!detail::parse_number(f[2], cutoff) || !detail::parse_number(f[3], user) || !detail::parse_number(f[4], value)) {
      throw DataError(detail::location(path, line_no) + ": malformed row");
    }
    if (f[0] == scheme && f[1] == metric && cutoff == n) out[user] = value;
  }
  return out;
}

void cmd_report(const Manifest& m, const fs::path& out) {
  const std::string scheme = m.str("report.scheme", "AOA");
  const std::string metric = m.str("report.metric", "NDCG");
  parse_scheme(scheme);
  parse_metric(metric);
  const int n = static_cast<int>(m.integer("report.n", 3));
  const auto a = read_per_user(m.require("report.a"), scheme, metric, n);
  const auto b = read_per_user(m.require("report.b"), scheme, metric, n);
  std::vector<double> va, vb;
  for (const auto& [user, value] : a) {
    auto it = b.find(user);
    if (it == b.end()) continue;
    va.push_back(value);
    vb.push_back(it->second);
  }
  if (va.size() < 2) throw DataError("fewer than two users shared by both per-user files");
  const TTestResult t = paired_t_test(va, vb);
  double mean_a = 0, mean_b = 0;
  for (std::size_t k = 0; k < va.size(); ++k) {
    mean_a += va[k] / static_cast<double>(va.size());
    mean_b += vb[k] / static_cast<double>(vb.size());
  }
  auto csv = open_output(out / "report.csv");
  csv << "scheme,metric,n,num_users,mean_a,mean_b,t,df,p_value\n";
  csv << scheme << ',' << metric << ',' << n << ',' << va.size() << ',' << format_value(mean_a) << ','
      << format_value(mean_b) << ',' << format_value(t.t) << ',' << t.df << ',' << format_value(t.p_value) << '\n';
  log_info("one-tailed paired t-test: t = " + format_value(t.t) + ", p = " + format_value(t.p_value));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased implicit-feedback recommenders: data preparation, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  // Flags that mirror manifest keys (--train.learning_rate=0.1 or
  // --train.learning_rate 0.1) are collected here; CLI11 sees the rest.
  std::vector<std::string> overrides;
  std::vector<std::string> args{argv[0]};
  for (int k = 1; k < argc; ++k) {
    std::string arg = argv[k];
    const auto eq = arg.find('=');
    const std::string name = arg.substr(0, eq);
    if (arg.rfind("--", 0) != 0 || name.find('.') == std::string::npos) {
      args.push_back(arg);
      continue;
    }
    if (eq == std::string::npos) {
      if (k + 1 >= argc) {
        std::cerr << "config error: flag " << arg << " needs a value\n";
        return kConfigError;
      }
      arg += std::string("=") + argv[++k];
    }
    overrides.push_back(arg.substr(2));
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());

  std::string manifest_path;
  std::vector<std::string> sets;
  std::string out_flag;
  std::optional<std::uint64_t> seed_flag;
  int jobs = 0;
  bool quiet = false;
  std::string split_flag, model_flag;

  app.add_option("--manifest,-m", manifest_path, "key=value manifest file");
  app.add_option("--set", sets, "override a manifest key (key=value), repeatable");
  app.add_option("--out,-o", out_flag, "output directory");
  app.add_option("--seed", seed_flag, "global seed");
  app.add_option("--jobs,-j", jobs, "parallel grid runs");
  app.add_option("--split", split_flag, "prepared split directory (data.split_dir)");
  app.add_option("--model", model_flag, "trained model directory (eval.model_dir)");
  app.add_flag("--quiet,-q", quiet, "suppress progress messages");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"prepare", "binarize, filter and split a dataset"},
      {"train", "train one model on a prepared split"},
      {"evaluate", "score a trained model on the test split"},
      {"grid", "grid search over training hyperparameters"},
      {"synth", "generate a synthetic dataset with known exposure and relevance"},
      {"report", "one-tailed paired t-test between two per-user metric files"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  set_quiet(quiet);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    KeyValues kv;
    if (!manifest_path.empty()) kv = read_key_values(manifest_path);
    sets.insert(sets.end(), overrides.begin(), overrides.end());
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (seed_flag) kv["seed"] = std::to_string(*seed_flag);
    if (!split_flag.empty()) kv["data.split_dir"] = split_flag;
    if (!model_flag.empty()) kv["eval.model_dir"] = model_flag;
    const Manifest manifest(kv);

    fs::path out;
    if (!out_flag.empty()) out = out_flag;
    else if (manifest.has("out")) out = manifest.str("out", "");
    else if (const char* root = std::getenv("BISER_OUTPUT_ROOT"); root && *root) out = fs::path(root) / command;
    else out = fs::path("biser_out") / command;
    ensure_dir(out);

    if (command == "prepare") cmd_prepare(manifest, out);
    else if (command == "train") cmd_train(manifest, out);
    else if (command == "evaluate") cmd_evaluate(manifest, out);
    else if (command == "grid") cmd_grid(manifest, out, jobs);
    else if (command == "synth") cmd_synth(manifest, out);
    else if (command == "report") cmd_report(manifest, out);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOtherError;
  }
}
