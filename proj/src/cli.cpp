#include "vfg/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vfg/checkpoint.hpp"
#include "vfg/data.hpp"
#include "vfg/error.hpp"
#include "vfg/infer.hpp"

namespace vfg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

InitMode parse_init(const std::string& s) {
  if (s == "near-identity") return InitMode::NearIdentity;
  if (s == "random") return InitMode::Random;
  throw UsageError("unknown init mode '" + s + "' (expected near-identity or random)");
}

const char* init_name(InitMode m) { return m == InitMode::Random ? "random" : "near-identity"; }

template <class T>
T typed(const json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw UsageError("config key '" + key + "' must be a non-negative integer");
  } else if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw UsageError("config key '" + key + "' must be a number");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw UsageError("config key '" + key + "' must be true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw UsageError("config key '" + key + "' must be a string");
  }
  return v.get<T>();
}

std::vector<LayerPhase> parse_layerwise(const json& v) {
  if (!v.is_array()) throw UsageError("config key 'layerwise' must be an array of {layers, steps}");
  std::vector<LayerPhase> out;
  for (const json& p : v) {
    if (!p.is_object()) throw UsageError("layerwise entries must be objects");
    LayerPhase phase;
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (it.key() == "layers") {
        if (!it.value().is_array()) throw UsageError("layerwise.layers must be an array");
        for (const json& l : it.value()) phase.layers.insert(typed<std::size_t>(l, "layerwise.layers"));
      } else if (it.key() == "steps") {
        phase.steps = typed<std::size_t>(it.value(), "layerwise.steps");
      } else {
        throw UsageError("unknown config key 'layerwise." + it.key() + "'");
      }
    }
    out.push_back(std::move(phase));
  }
  return out;
}

}  // namespace

void apply_config_json(RunConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    TrainConfig& t = cfg.train;
    if (k == "batch_size") t.batch_size = typed<std::size_t>(v, k);
    else if (k == "steps") t.steps = typed<std::size_t>(v, k);
    else if (k == "learning_rate") t.learning_rate = typed<double>(v, k);
    else if (k == "beta") t.beta = typed<double>(v, k);
    else if (k == "mask_every") t.mask_every = typed<std::size_t>(v, k);
    else if (k == "mask_fraction") t.mask_fraction = typed<double>(v, k);
    else if (k == "layerwise") t.layerwise = parse_layerwise(v);
    else if (k == "seed") t.seed = typed<std::uint64_t>(v, k);
    else if (k == "recon_mode") t.recon_mode = cfg.model.recon = parse_recon_mode(typed<std::string>(v, k));
    else if (k == "checkpoint_every") t.checkpoint_every = typed<std::size_t>(v, k);
    else if (k == "grad_clip") t.grad_clip = typed<double>(v, k);
    else if (k == "init") cfg.model.init = parse_init(typed<std::string>(v, k));
    else if (k == "clamp") cfg.model.clamp = typed<double>(v, k);
    else if (k == "prior") cfg.model.prior = parse_prior_family(typed<std::string>(v, k));
    else if (k == "num_classes") cfg.model.num_classes = typed<std::size_t>(v, k);
    else if (k == "graph") cfg.graph = typed<std::string>(v, k);
    else if (k == "data") cfg.data = typed<std::string>(v, k);
    else if (k == "out") cfg.out = typed<std::string>(v, k);
    else if (k == "model") cfg.checkpoint = typed<std::string>(v, k);
    else if (k == "label_column") cfg.label_column = typed<std::string>(v, k);
    else if (k == "standardize") cfg.standardize = typed<bool>(v, k);
    else if (k == "observe") {
      if (!v.is_array()) throw UsageError("config key 'observe' must be an array of section numbers");
      cfg.observe.clear();
      for (const json& p : v) cfg.observe.push_back(typed<std::size_t>(p, k));
    } else if (k == "count") cfg.count = typed<std::size_t>(v, k);
    else if (k == "label") cfg.label = typed<std::size_t>(v, k);
    else throw UsageError("unknown config key '" + k + "'");
  }
}

json train_config_to_json(const TrainConfig& t) {
  json layerwise = json::array();
  for (const auto& p : t.layerwise) layerwise.push_back({{"layers", p.layers}, {"steps", p.steps}});
  return {{"batch_size", t.batch_size},
          {"steps", t.steps},
          {"learning_rate", t.learning_rate},
          {"beta", t.beta},
          {"mask_every", t.mask_every},
          {"mask_fraction", t.mask_fraction},
          {"layerwise", layerwise},
          {"seed", t.seed},
          {"recon_mode", to_string(t.recon_mode)},
          {"checkpoint_every", t.checkpoint_every},
          {"grad_clip", t.grad_clip}};
}

json model_config_to_json(const ModelConfig& m) {
  return {{"init", init_name(m.init)},
          {"clamp", m.clamp},
          {"prior", to_string(m.prior)},
          {"num_classes", m.num_classes}};
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw UsageError("bad section list '" + text + "' (expected e.g. 1,3)");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty section list");
  return out;
}

namespace {

std::string read_file(const fs::path& p, const char* what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError(std::string(what) + " '" + p.string() + "' cannot be opened");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::string& require(const std::optional<std::string>& v, const char* flag) {
  if (!v) throw UsageError(std::string("missing required option ") + flag);
  return *v;
}

void require_file(const std::optional<std::string>& v, const char* flag) {
  if (!fs::is_regular_file(require(v, flag))) throw UsageError(std::string(flag) + " '" + *v + "' does not exist");
}

fs::path output_file(const RunConfig& c, const std::string& default_name) {
  if (c.out) return *c.out;
  if (const char* env = std::getenv("VFG_OUTPUT_DIR"); env != nullptr && *env != '\0') return fs::path(env) / default_name;
  throw UsageError("no output path: pass --out or set VFG_OUTPUT_DIR");
}

void claim_output(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw UsageError("refusing to overwrite '" + p.string() + "' (use --force)");
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
}

Table read_table(const std::string& path) {
  const std::string text = read_file(path, "data file");
  const auto first = text.find_first_not_of(" \t\r\n");
  bool header = false;
  if (first != std::string::npos) {
    const auto stop = text.find_first_of(",\r\n", first);
    const std::string cell = text.substr(first, stop == std::string::npos ? std::string::npos : stop - first);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    header = ec != std::errc() || ptr != cell.data() + cell.size();
  }
  return parse_table(text, header, path);
}

/// Removes the label column (if configured) and returns the labels.
std::vector<std::size_t> take_labels(Table& t, const std::optional<std::string>& column) {
  if (!column) return {};
  const auto it = std::find(t.columns.begin(), t.columns.end(), *column);
  if (it == t.columns.end()) throw DataError("label column '" + *column + "' not found in data");
  const std::size_t lc = static_cast<std::size_t>(it - t.columns.begin());
  const std::size_t cols = t.values.cols();
  std::vector<std::size_t> labels;
  std::vector<double> rest;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double v = t.values.at(r, lc);
    if (v < 0.0 || v != std::floor(v)) {
      throw DataError("row " + std::to_string(r + 1) + ": label '" + std::to_string(v) + "' is not a class index");
    }
    labels.push_back(static_cast<std::size_t>(v));
    for (std::size_t c = 0; c < cols; ++c) {
      if (c != lc) rest.push_back(t.values.at(r, c));
    }
  }
  t.columns.erase(it);
  t.values = Tensor(Shape{t.rows(), cols - 1}, std::move(rest));
  return labels;
}

std::string num(double v) { return json(v).dump(); }

json breakdown_json(const ElboBreakdown& b) {
  return {{"elbo", b.total}, {"recon", b.recon}, {"kl_sum", b.kl_sum()},
          {"node_kls", b.node_kls}, {"root_kls", b.root_kls}, {"beta", b.beta}};
}

struct Loaded {
  Checkpoint ckpt;
  Table raw;
  Dataset data;
};

/// Checkpoint plus data prepared the way training saw it.
Loaded load_model_and_data(const RunConfig& c) {
  require_file(c.checkpoint, "--model");
  require_file(c.data, "--data");
  Loaded l{load_checkpoint(*c.checkpoint), read_table(*c.data), {}};
  std::optional<std::string> label_column = c.label_column;
  if (!label_column && l.ckpt.config.contains("label_column") && l.ckpt.config["label_column"].is_string()) {
    label_column = l.ckpt.config["label_column"].get<std::string>();
  }
  l.data.labels = take_labels(l.raw, label_column);
  if (l.raw.values.cols() != l.ckpt.model.graph.data_dim()) {
    throw DataError("data '" + *c.data + "' has " + std::to_string(l.raw.values.cols()) + " columns, model expects " +
                    std::to_string(l.ckpt.model.graph.data_dim()));
  }
  l.data.x = l.ckpt.standardization ? apply_standardization(l.raw.values, *l.ckpt.standardization) : l.raw.values;
  return l;
}

Tensor to_raw_units(const Checkpoint& ckpt, const Tensor& x) {
  return ckpt.standardization ? invert_standardization(x, *ckpt.standardization) : x;
}

std::vector<std::string> model_columns(const Checkpoint& ckpt) {
  if (ckpt.config.contains("columns") && ckpt.config["columns"].is_array()) {
    auto cols = ckpt.config["columns"].get<std::vector<std::string>>();
    if (cols.size() == ckpt.model.graph.data_dim()) return cols;
  }
  std::vector<std::string> cols;
  for (std::size_t c = 0; c < ckpt.model.graph.data_dim(); ++c) cols.push_back("x" + std::to_string(c + 1));
  return cols;
}

int cmd_gen_data(RunConfig& c, const std::string& kind, int blocks, const std::optional<std::string>& graph_out) {
  if (c.count < 1) throw UsageError("--count must be >= 1");
  const fs::path out = output_file(c, "data.csv");
  claim_output(out, c.force);
  if (kind == "sine") {
    save_table(gen_sine(c.count, c.train.seed), out);
    std::cout << "wrote " << c.count << " x 8 rows to " << out.string() << "\n";
    return 0;
  }
  if (graph_out) claim_output(*graph_out, c.force);
  const ScmData scm = gen_scm(c.count, c.train.seed, ScmSpec::default_spec(), blocks);
  const Table table = duplicate_columns(scm.table);
  save_table(table, out);
  if (graph_out) write_file(*graph_out, serialize_graph_spec(scm.graph));
  std::cout << "wrote " << c.count << " x " << table.cols() << " rows to " << out.string() << "\n";
  return 0;
}

int cmd_train(RunConfig& c) {
  require_file(c.graph, "--graph");
  require_file(c.data, "--data");
  c.train.validate();
  fs::path dir;
  if (c.out) {
    dir = *c.out;
  } else if (const char* env = std::getenv("VFG_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    dir = env;
  } else {
    throw UsageError("no output directory: pass --out or set VFG_OUTPUT_DIR");
  }
  const fs::path ckpt_path = dir / "ckpt.json";
  const fs::path metrics_path = dir / "metrics.jsonl";
  claim_output(ckpt_path, c.force);
  claim_output(metrics_path, c.force);

  const VfgGraph graph = parse_graph_spec(read_file(*c.graph, "graph spec"));
  Table table = read_table(*c.data);
  Dataset data;
  data.labels = take_labels(table, c.label_column);
  if (table.values.cols() != graph.data_dim()) {
    throw DataError("data '" + *c.data + "' has " + std::to_string(table.values.cols()) + " columns, graph expects " +
                    std::to_string(graph.data_dim()));
  }
  Checkpoint ckpt;
  if (c.standardize) {
    table = standardize(table);
    ckpt.standardization = table.stats;
  }
  data.x = table.values;
  c.model.recon = c.train.recon_mode;
  Model model = init_model(graph, c.model, c.train.seed);

  ckpt.config = train_config_to_json(c.train);
  ckpt.config.update(model_config_to_json(c.model));
  ckpt.config["standardize"] = c.standardize;
  ckpt.config["columns"] = table.columns;
  if (c.label_column) ckpt.config["label_column"] = *c.label_column;

  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw DataError("cannot write '" + metrics_path.string() + "'");
  auto on_step = [&](const StepRecord& r, const Model& m) {
    metrics << json{{"step", r.step},         {"elbo", r.elbo},     {"recon", r.recon}, {"kl_sum", r.kl_sum},
                    {"grad_norm", r.grad_norm}, {"wall_ms", r.wall_ms}, {"masked", r.masked}}
                   .dump()
            << "\n";
    if (c.train.checkpoint_every > 0 && (r.step + 1) % c.train.checkpoint_every == 0) {
      Checkpoint snap{m, r.step + 1, 0, ckpt.config, ckpt.standardization};
      save_checkpoint(snap, dir / ("ckpt_step" + std::to_string(r.step + 1) + ".json"));
    }
  };
  TrainResult result = train(std::move(model), data, c.train, on_step);
  const ElboBreakdown final_bd = evaluate_dataset(result.model, data, c.train.beta);
  json final_rec = breakdown_json(final_bd);
  final_rec["final"] = true;
  final_rec["step"] = c.train.steps;
  final_rec["rows"] = data.rows();
  metrics << final_rec.dump() << "\n";

  ckpt.model = std::move(result.model);
  ckpt.step = c.train.steps;
  ckpt.rng_state = result.rng_state;
  save_checkpoint(ckpt, ckpt_path);
  std::cout << "trained " << c.train.steps << " steps on " << data.rows() << " rows\n"
            << "final elbo " << num(final_bd.total) << " (recon " << num(final_bd.recon) << ", kl_sum "
            << num(final_bd.kl_sum()) << ", beta " << num(final_bd.beta) << ")\n"
            << "checkpoint " << ckpt_path.string() << "\nmetrics " << metrics_path.string() << "\n";
  return 0;
}

int cmd_eval(RunConfig& c) {
  Loaded l = load_model_and_data(c);
  double beta = kDefaultBeta;
  if (c.beta) beta = *c.beta;
  else if (l.ckpt.config.contains("beta") && l.ckpt.config["beta"].is_number()) beta = l.ckpt.config["beta"].get<double>();

  std::optional<fs::path> rows_path;
  if (c.out || std::getenv("VFG_OUTPUT_DIR") != nullptr) {
    rows_path = output_file(c, "elbo_rows.jsonl");
    claim_output(*rows_path, c.force);
  }
  std::ostringstream rows;
  for (std::size_t r = 0; r < l.data.rows(); ++r) {
    std::vector<std::size_t> label;
    if (!l.data.labels.empty()) label.push_back(l.data.labels[r]);
    json rec = breakdown_json(elbo(l.ckpt.model, l.data.x.row(r), label, beta));
    rec["row"] = r + 1;
    rows << rec.dump() << "\n";
  }
  if (rows_path) write_file(*rows_path, rows.str());
  else std::cout << rows.str();
  json agg = breakdown_json(evaluate_dataset(l.ckpt.model, l.data, beta));
  agg["rows"] = l.data.rows();
  std::cout << agg.dump() << "\n";
  return 0;
}

int cmd_impute(RunConfig& c) {
  if (c.observe.empty()) throw UsageError("missing required option --observe");
  Loaded l = load_model_and_data(c);
  const fs::path out = output_file(c, "imputed.csv");
  claim_output(out, c.force);
  const VfgGraph& g = l.ckpt.model.graph;
  const ObservedSet observed = observed_from_sections(g, c.observe);
  const Tensor imputed = impute(l.ckpt.model, l.data.x, observed);
  const Tensor imputed_raw = to_raw_units(l.ckpt, imputed);

  Table result{l.raw.columns, l.raw.values, {}};
  for (std::size_t k = 0; k < g.leaves().size(); ++k) {
    const std::size_t leaf = g.leaves()[k];
    if (observed.contains(leaf)) continue;
    const Section& s = g.section(leaf);
    double se = 0.0;
    for (std::size_t r = 0; r < result.rows(); ++r) {
      for (std::size_t col = s.begin; col < s.end; ++col) {
        const double d = imputed.at(r, col) - l.data.x.at(r, col);
        se += d * d;
        result.values.at(r, col) = imputed_raw.at(r, col);
      }
    }
    const double mse = se / static_cast<double>(result.rows() * s.size());
    std::cout << "section " << k + 1 << " (" << g.node(leaf).id << ") mse " << num(mse)
              << (l.ckpt.standardization ? " [standardized units]" : "") << "\n";
  }
  save_table(result, out);
  std::cout << "wrote " << result.rows() << " rows to " << out.string() << "\n";
  return 0;
}

int cmd_sample(RunConfig& c) {
  require_file(c.checkpoint, "--model");
  const Checkpoint ckpt = load_checkpoint(*c.checkpoint);
  const fs::path out = output_file(c, "samples.csv");
  claim_output(out, c.force);
  const Tensor s = sample(ckpt.model, c.count, c.train.seed, c.label);
  save_table(Table{model_columns(ckpt), to_raw_units(ckpt, s), {}}, out);
  std::cout << "wrote " << c.count << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_encode(RunConfig& c) {
  Loaded l = load_model_and_data(c);
  const fs::path out = output_file(c, "encoded.csv");
  claim_output(out, c.force);
  const auto codes = encode(l.ckpt.model, l.data.x);
  Table t;
  std::size_t width = 0;
  for (const auto& [id, v] : codes) {
    for (std::size_t k = 0; k < v.cols(); ++k) t.columns.push_back(id + "_" + std::to_string(k + 1));
    width += v.cols();
  }
  const std::size_t rows = l.data.rows();
  t.values = Tensor(Shape{rows, width});
  std::size_t off = 0;
  for (const auto& [id, v] : codes) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < v.cols(); ++k) t.values.at(r, off + k) = v.at(r, k);
    }
    off += v.cols();
  }
  save_table(t, out);
  std::cout << "wrote " << rows << " encodings (" << width << " columns) to " << out.string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Variational flow graphical models: train, impute, evaluate, sample, encode"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  RunConfig cfg;
  std::string config_path;
  std::string observe_text;
  std::string recon_text, prior_text, init_text;
  std::string gen_kind;
  int gen_blocks = kDefaultBlocks;
  std::optional<std::string> graph_out;
  std::size_t label_value = 0;
  double beta_value = kDefaultBeta;
  std::vector<std::pair<CLI::Option*, std::function<void()>>> overrides;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration (flags override it)");
    sub->add_flag("--force", cfg.force, "Overwrite existing outputs");
  };
  auto path_opt = [](CLI::App* sub, const char* name, std::optional<std::string>& target, const char* help) {
    sub->add_option(name, target, help);
  };

  CLI::App* train_cmd = app.add_subcommand("train", "Fit a model to data");
  CLI::App* impute_cmd = app.add_subcommand("impute", "Fill unobserved sections");
  CLI::App* eval_cmd = app.add_subcommand("eval-elbo", "Evaluate the ELBO per row and in aggregate");
  CLI::App* sample_cmd = app.add_subcommand("sample", "Draw samples from a model");
  CLI::App* encode_cmd = app.add_subcommand("encode", "Root states of fully observed rows");
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  for (CLI::App* sub : {train_cmd, impute_cmd, eval_cmd, sample_cmd, encode_cmd, gen_cmd}) common(sub);

  // Overridable values are parsed into locals and copied onto the config
  // after --config has been applied.
  TrainConfig flags;
  ModelConfig model_flags;
  std::optional<std::string> graph, data, out, model_path, label_column;
  std::size_t count = 1000;
  bool standardize = false;

  auto add = [&](CLI::App* sub, const std::string& name, auto& target, const char* help, std::function<void()> copy) {
    overrides.emplace_back(sub->add_option(name, target, help), std::move(copy));
  };

  path_opt(train_cmd, "--graph", graph, "Graph spec (JSON)");
  for (CLI::App* sub : {train_cmd, impute_cmd, eval_cmd, encode_cmd}) path_opt(sub, "--data", data, "CSV data");
  for (CLI::App* sub : {impute_cmd, eval_cmd, sample_cmd, encode_cmd}) path_opt(sub, "--model", model_path, "Checkpoint");
  for (CLI::App* sub : {train_cmd, impute_cmd, eval_cmd, sample_cmd, encode_cmd, gen_cmd}) {
    path_opt(sub, "--out", out, "Output path (directory for train)");
    sub->add_option("--seed", flags.seed, "Seed for all randomness");
  }
  for (CLI::App* sub : {train_cmd, eval_cmd, impute_cmd, encode_cmd}) {
    path_opt(sub, "--label-column", label_column, "Column holding class labels");
  }
  add(train_cmd, "--steps", flags.steps, "Optimizer steps", [&] { cfg.train.steps = flags.steps; });
  add(train_cmd, "--batch-size", flags.batch_size, "Minibatch size", [&] { cfg.train.batch_size = flags.batch_size; });
  add(train_cmd, "--lr", flags.learning_rate, "Adam learning rate", [&] { cfg.train.learning_rate = flags.learning_rate; });
  add(train_cmd, "--beta", flags.beta, "KL weight", [&] { cfg.train.beta = flags.beta; });
  add(train_cmd, "--mask-every", flags.mask_every, "Masked step period (0 = never)",
      [&] { cfg.train.mask_every = flags.mask_every; });
  add(train_cmd, "--mask-fraction", flags.mask_fraction, "Fraction of sections hidden in masked steps",
      [&] { cfg.train.mask_fraction = flags.mask_fraction; });
  add(train_cmd, "--grad-clip", flags.grad_clip, "Global gradient-norm clip (0 = off)",
      [&] { cfg.train.grad_clip = flags.grad_clip; });
  add(train_cmd, "--checkpoint-every", flags.checkpoint_every, "Intermediate checkpoint period",
      [&] { cfg.train.checkpoint_every = flags.checkpoint_every; });
  add(train_cmd, "--recon", recon_text, "gaussian | binary",
      [&] { cfg.train.recon_mode = cfg.model.recon = parse_recon_mode(recon_text); });
  add(train_cmd, "--prior", prior_text, "standard-gaussian | laplace",
      [&] { cfg.model.prior = parse_prior_family(prior_text); });
  add(train_cmd, "--num-classes", model_flags.num_classes, "Class-conditional root locations",
      [&] { cfg.model.num_classes = model_flags.num_classes; });
  add(train_cmd, "--init", init_text, "near-identity | random", [&] { cfg.model.init = parse_init(init_text); });
  add(train_cmd, "--clamp", model_flags.clamp, "Coupling scale clamp", [&] { cfg.model.clamp = model_flags.clamp; });
  train_cmd->add_flag("--standardize", standardize, "Standardize columns before training");
  add(impute_cmd, "--observe", observe_text, "Observed sections, 1-based (e.g. 1,3)",
      [&] { cfg.observe = parse_index_list(observe_text); });
  add(eval_cmd, "--beta", beta_value, "KL weight (default: the training value)", [&] { cfg.beta = beta_value; });
  for (CLI::App* sub : {sample_cmd, gen_cmd}) {
    add(sub, "--count", count, "Number of rows", [&] { cfg.count = count; });
  }
  add(sample_cmd, "--label", label_value, "Class label for conditional priors", [&] { cfg.label = label_value; });
  gen_cmd->add_option("kind", gen_kind, "sine | scm")->required()->check(CLI::IsMember({"sine", "scm"}));
  gen_cmd->add_option("--blocks", gen_blocks, "Coupling blocks per edge in the emitted graph (scm)");
  gen_cmd->add_option("--graph-out", graph_out, "Where to write the emitted graph spec (scm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) {
      json doc;
      try {
        doc = json::parse(read_file(config_path, "config file"));
      } catch (const json::parse_error& e) {
        throw UsageError("config file '" + config_path + "' is not valid JSON: " + e.what());
      }
      apply_config_json(cfg, doc);
    }
    for (const auto& [opt, copy] : overrides) {
      if (opt->count() > 0) copy();
    }
    if (sub->count("--seed")) cfg.train.seed = flags.seed;
    if (graph) cfg.graph = graph;
    if (data) cfg.data = data;
    if (out) cfg.out = out;
    if (model_path) cfg.checkpoint = model_path;
    if (label_column) cfg.label_column = label_column;
    if (standardize) cfg.standardize = true;

    const std::string name = sub->get_name();
    if (name == "train") return cmd_train(cfg);
    if (name == "impute") return cmd_impute(cfg);
    if (name == "eval-elbo") return cmd_eval(cfg);
    if (name == "sample") return cmd_sample(cfg);
    if (name == "encode") return cmd_encode(cfg);
    return cmd_gen_data(cfg, gen_kind, gen_blocks, graph_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace vfg::cli
