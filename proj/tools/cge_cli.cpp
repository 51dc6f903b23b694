// cge: generate, sample, train, eval and analyze from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cge/cge.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cge;

namespace {

void log(const std::string& msg) { std::cerr << "[cge] " << msg << '\n'; }

std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

Graph load_dataset(const std::string& path) {
  auto in = open_in(path);
  return read_portable(in);
}

json read_json(const fs::path& p) {
  auto in = open_in(p);
  return json::parse(in);
}

/// Writes the manifest, echoes its path on stdout.
void finish(const fs::path& manifest_path, const json& manifest) {
  auto out = open_out(manifest_path);
  out << manifest.dump(2) << '\n';
  std::cout << manifest_path.string() << '\n';
}

/// key=value form of the resolved options, usable as --config for a rerun.
void write_resolved(const fs::path& p, const json& config) {
  auto out = open_out(p);
  for (const auto& [k, v] : config.items()) {
    out << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t blocks = 2;
  std::size_t nodes_per_block = 100;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t labels_per_block = 5;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  std::size_t noise_nodes = 0;
  std::size_t noise_degree = 3;
  std::uint64_t seed = 1;
};

void cmd_gen(const GenArgs& a) {
  Graph g = generate_sbm(a.blocks, a.nodes_per_block, a.p_in, a.p_out, a.labels_per_block,
                         a.feature_dim, a.seed, SbmOptions{a.feature_noise});
  if (a.noise_nodes > 0) {
    g = inject_noise_nodes(g, a.noise_nodes, a.noise_degree, mix_seed(a.seed, 100), a.feature_noise);
  }
  {
    auto out = open_out(a.out);
    write_portable(out, g);
  }
  const auto st = stats(g);
  log("wrote " + a.out + ": " + std::to_string(st.nodes) + " nodes, " + std::to_string(st.edges) +
      " edges, " + std::to_string(st.labeled) + " labelled");
  json config = {{"blocks", a.blocks},
                 {"nodes-per-block", a.nodes_per_block},
                 {"p-in", a.p_in},
                 {"p-out", a.p_out},
                 {"labels-per-block", a.labels_per_block},
                 {"feature-dim", a.feature_dim},
                 {"feature-noise", a.feature_noise},
                 {"noise-nodes", a.noise_nodes},
                 {"noise-degree", a.noise_degree},
                 {"seed", a.seed},
                 {"out", a.out}};
  finish(a.out + ".manifest.json",
         {{"command", "gen"},
          {"config", config},
          {"seed", a.seed},
          {"artifacts", {{"dataset", a.out}}},
          {"dataset_fingerprint", file_fingerprint(a.out)},
          {"stats", {{"nodes", st.nodes}, {"edges", st.edges}, {"classes", st.classes},
                     {"labeled", st.labeled}}}});
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string dataset;
  std::string out;
  CorpusConfig corpus;
  std::uint64_t seed = 1;
};

json corpus_json(const CorpusConfig& c) {
  return {{"walks-per-node", c.walks_per_node},
          {"max-len", c.max_len},
          {"window", c.window},
          {"pairs-per-class", c.pairs_per_class}};
}

void cmd_sample(const SampleArgs& a) {
  const Graph g = load_dataset(a.dataset);
  const PairCorpus corpus = build_corpus(g, a.corpus, a.seed);
  {
    auto out = open_out(a.out);
    write_corpus(out, corpus);
  }
  log("wrote " + std::to_string(corpus.samples.size()) + " sub-paths to " + a.out);
  json config = corpus_json(a.corpus);
  config["dataset"] = a.dataset;
  config["seed"] = a.seed;
  config["out"] = a.out;
  finish(a.out + ".manifest.json", {{"command", "sample"},
                                    {"config", config},
                                    {"seed", a.seed},
                                    {"dataset_fingerprint", file_fingerprint(a.dataset)},
                                    {"artifacts", {{"corpus", a.out}}},
                                    {"samples", corpus.samples.size()}});
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string corpus;
  std::string out;
  std::string mode = "transductive";
  std::string reweight = "lstm";
  std::string order = "first";
  TrainConfig cfg;
};

json train_config_json(const TrainArgs& a) {
  const TrainConfig& c = a.cfg;
  json j = {{"mode", to_string(c.mode)},
            {"reweight", to_string(c.variant)},
            {"order", to_string(c.order)},
            {"lambda", c.lambda},
            {"xi", c.effective_xi()},
            {"lr-alpha", c.lr_alpha},
            {"lr-wa", c.lr_wa},
            {"dim", c.embed_dim},
            {"head-dim", c.head_dim},
            {"lstm-hidden", c.lstm_hidden},
            {"batch", c.batch_size},
            {"neg", c.negatives},
            {"steps", c.max_steps},
            {"patience", c.patience},
            {"lambda-in-inner", c.lambda_in_inner}};
  j.update(corpus_json(c.corpus));
  j["seed"] = c.seed;
  j["dataset"] = a.dataset;
  if (!a.corpus.empty()) j["corpus"] = a.corpus;
  j["out"] = a.out;
  return j;
}

void cmd_train(TrainArgs a) {
  a.cfg.mode = parse_mode(a.mode);
  a.cfg.variant = parse_variant(a.reweight);
  a.cfg.order = parse_order(a.order);
  const Graph g = load_dataset(a.dataset);
  PairCorpus corpus;
  if (a.corpus.empty()) {
    corpus = build_corpus(g, a.cfg.corpus, a.cfg.seed);
  } else {
    auto in = open_in(a.corpus);
    corpus = read_corpus(in);
  }
  log("training " + std::string(to_string(a.cfg.variant)) + " (" + to_string(a.cfg.mode) + ", " +
      to_string(a.cfg.order) + " order) on " + std::to_string(g.node_count()) + " nodes, " +
      std::to_string(corpus.samples.size()) + " sub-paths");
  const TrainedModel tm = train(g, corpus, a.cfg);
  log("stopped after " + std::to_string(tm.trace.size()) + " steps" +
      (tm.converged ? " (validation plateau)" : ""));

  const fs::path dir = a.out;
  {
    auto out = open_out(dir / "checkpoint.bin", true);
    write_checkpoint(out, tm.model.store);
  }
  {
    auto out = open_out(dir / "trace.csv");
    write_trace_csv(out, tm.trace);
  }
  {
    const auto w = weights(corpus.samples, tm.model.input_table(), tm.model.store,
                           tm.model.weight_model);
    auto out = open_out(dir / "weights.csv");
    write_weights_csv(out, corpus_records(corpus, w, g));
  }
  const json config = train_config_json(a);
  write_resolved(dir / "config.txt", config);
  json manifest = {{"command", "train"},
                   {"config", config},
                   {"seed", a.cfg.seed},
                   {"dataset_fingerprint", file_fingerprint(a.dataset)},
                   {"artifacts",
                    {{"checkpoint", (dir / "checkpoint.bin").string()},
                     {"trace", (dir / "trace.csv").string()},
                     {"weights", (dir / "weights.csv").string()},
                     {"config", (dir / "config.txt").string()}}},
                   {"steps", tm.trace.size()},
                   {"converged", tm.converged}};
  if (!a.corpus.empty()) manifest["corpus_fingerprint"] = file_fingerprint(a.corpus);
  finish(dir / "manifest.json", manifest);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset;
  std::string run;
  std::string out;
};

Model load_model(const fs::path& run, const Graph& g) {
  const json m = read_json(run / "manifest.json");
  if (m.value("command", "") != "train") throw ConfigError(run.string() + " is not a train run");
  const json& c = m.at("config");
  TrainConfig cfg;
  cfg.mode = parse_mode(c.at("mode").get<std::string>());
  cfg.variant = parse_variant(c.at("reweight").get<std::string>());
  cfg.embed_dim = c.at("dim").get<std::size_t>();
  cfg.head_dim = c.at("head-dim").get<std::size_t>();
  cfg.lstm_hidden = c.at("lstm-hidden").get<std::size_t>();
  Model model = Model::init(model_spec(g, cfg), 0);
  auto in = open_in(run / "checkpoint.bin", true);
  ParamStore loaded = read_checkpoint(in);
  if (loaded.size() != model.store.size()) throw ShapeError("checkpoint does not match the dataset");
  for (ParamId i = 0; i < loaded.size(); ++i) {
    const ParamId id = model.store.id(loaded.name(i));
    if (!loaded.value(i).same_shape(model.store.value(id))) {
      throw ShapeError("checkpoint parameter '" + loaded.name(i) + "' has the wrong shape");
    }
    model.store.value(id) = loaded.value(i);
  }
  return model;
}

void cmd_eval(const EvalArgs& a) {
  const Graph g = load_dataset(a.dataset);
  const Model model = load_model(a.run, g);
  const EvalReport rep = evaluate(model, g);
  log("test accuracy " + fmt_double(rep.accuracy) + " (" + std::to_string(rep.correct) + "/" +
      std::to_string(rep.total) + ")");
  const fs::path out = a.out.empty() ? fs::path(a.run) / "eval.json" : fs::path(a.out);
  json confusion = json::array();
  for (std::size_t t = 0; t < rep.classes; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < rep.classes; ++p) row.push_back(rep.at(t, p));
    confusion.push_back(row);
  }
  {
    auto f = open_out(out);
    f << json{{"accuracy", rep.accuracy},
              {"correct", rep.correct},
              {"total", rep.total},
              {"confusion", confusion}}
             .dump(2)
      << '\n';
  }
  finish(out.string() + ".manifest.json",
         {{"command", "eval"},
          {"config", {{"dataset", a.dataset}, {"run", a.run}, {"out", out.string()}}},
          {"dataset_fingerprint", file_fingerprint(a.dataset)},
          {"checkpoint_fingerprint", file_fingerprint((fs::path(a.run) / "checkpoint.bin").string())},
          {"artifacts", {{"report", out.string()}}}});
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::vector<std::string> weights;
  std::vector<int> targets;
  std::size_t classes = 0;
  std::string out;
};

json correlation_json(std::span<const PathRecord> recs, CorrelationKey key, std::ostream& csv,
                      std::size_t run) {
  json j;
  try {
    const auto rep = correlate(recs, key);
    j["pearson_r"] = rep.pearson_r;
    json buckets = json::array();
    for (const auto& b : rep.buckets) {
      buckets.push_back({{"key", b.key}, {"count", b.count}, {"mean_weight", b.mean_weight}});
      csv << run << ',' << b.key << ',' << b.count << ',' << fmt_double(b.mean_weight) << '\n';
    }
    j["buckets"] = buckets;
  } catch (const NumericalError& e) {
    j["pearson_r"] = nullptr;
    j["error"] = e.what();
  }
  try {
    j["pearson_r_per_record"] = correlate_records(recs, key);
  } catch (const NumericalError&) {
    j["pearson_r_per_record"] = nullptr;
  }
  return j;
}

void cmd_analyze(const AnalyzeArgs& a) {
  std::vector<std::vector<PathRecord>> runs;
  int max_cat = -1;
  for (const auto& p : a.weights) {
    auto in = open_in(p);
    runs.push_back(read_weights_csv(in));
    for (const auto& r : runs.back())
      for (int c : r.categories) max_cat = std::max(max_cat, c);
  }
  const std::size_t classes = a.classes > 0 ? a.classes : static_cast<std::size_t>(max_cat + 1);
  std::vector<int> targets = a.targets;
  if (targets.empty()) {
    for (std::size_t c = 0; c < classes; ++c) targets.push_back(static_cast<int>(c));
  }
  const fs::path dir = a.out;
  auto hist_csv = open_out(dir / "weight_histogram.csv");
  auto rel_csv = open_out(dir / "relevance.csv");
  auto len_csv = open_out(dir / "correlation_length.csv");
  auto div_csv = open_out(dir / "correlation_diversity.csv");
  hist_csv << "run,bin_low,bin_high,count\n";
  rel_csv << "run,with_target,without_target,with_count,without_count\n";
  len_csv << "run,length,count,mean_weight\n";
  div_csv << "run,diversity,count,mean_weight\n";

  json per_run = json::array();
  for (std::size_t r = 0; r < runs.size(); ++r) {
    json j = {{"weights", a.weights[r]}, {"records", runs[r].size()}};
    if (!runs[r].empty()) {
      const auto st = weight_stats(runs[r]);
      j["mean"] = st.mean;
      j["variance"] = st.variance;
      j["histogram"] = st.histogram;
      for (std::size_t b = 0; b < kHistogramBins; ++b) {
        hist_csv << r << ',' << fmt_double(b / double(kHistogramBins)) << ','
                 << fmt_double((b + 1) / double(kHistogramBins)) << ',' << st.histogram[b] << '\n';
      }
    }
    const auto rel = relevance_comparison(runs[r], targets);
    auto mean_or_null = [](bool empty, double v) { return empty ? json(nullptr) : json(v); };
    j["relevance"] = {{"targets", targets},
                      {"with_target", mean_or_null(rel.with_empty(), rel.with_target)},
                      {"without_target", mean_or_null(rel.without_empty(), rel.without_target)},
                      {"with_count", rel.with_count},
                      {"without_count", rel.without_count}};
    rel_csv << r << ',' << (rel.with_empty() ? "" : fmt_double(rel.with_target)) << ','
            << (rel.without_empty() ? "" : fmt_double(rel.without_target)) << ',' << rel.with_count
            << ',' << rel.without_count << '\n';
    j["correlation"] = {{"length", correlation_json(runs[r], CorrelationKey::Length, len_csv, r)},
                        {"diversity", correlation_json(runs[r], CorrelationKey::Diversity, div_csv, r)}};
    per_run.push_back(j);
  }

  json matrix = nullptr;
  if (classes > 0) {
    const auto cm = category_matrix(runs, classes);
    auto cm_csv = open_out(dir / "category_matrix.csv");
    cm_csv << "target_run,category,mean_weight,count\n";
    matrix = json::array();
    for (std::size_t t = 0; t < runs.size(); ++t) {
      json row = json::array();
      for (std::size_t y = 0; y < classes; ++y) {
        const auto cell = cm.at(t, y);
        row.push_back(cell ? json(*cell) : json(nullptr));
        cm_csv << t << ',' << y << ',' << (cell ? fmt_double(*cell) : "") << ',' << cm.count(t, y)
               << '\n';
      }
      matrix.push_back(row);
    }
  }
  {
    auto out = open_out(dir / "analysis.json");
    out << json{{"runs", per_run}, {"classes", classes}, {"category_matrix", matrix}}.dump(2) << '\n';
  }
  log("analysed " + std::to_string(runs.size()) + " weight file(s) into " + dir.string());
  json fingerprints = json::array();
  for (const auto& p : a.weights) fingerprints.push_back(file_fingerprint(p));
  json artifacts = {{"analysis", (dir / "analysis.json").string()},
                    {"weight_histogram", (dir / "weight_histogram.csv").string()},
                    {"relevance", (dir / "relevance.csv").string()},
                    {"correlation_length", (dir / "correlation_length.csv").string()},
                    {"correlation_diversity", (dir / "correlation_diversity.csv").string()}};
  if (classes > 0) artifacts["category_matrix"] = (dir / "category_matrix.csv").string();
  finish(dir / "manifest.json", {{"command", "analyze"},
                                 {"config", {{"weights", a.weights},
                                             {"targets", targets},
                                             {"classes", classes},
                                             {"out", a.out}}},
                                 {"input_fingerprints", fingerprints},
                                 {"artifacts", artifacts}});
}

/// Arguments contributed by a key=value config file: every key not already
/// given as a flag on the command line.
std::vector<std::string> config_args(const std::string& path, const CLI::App& sub,
                                     const std::vector<std::string>& argv) {
  auto in = open_in(path);
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "config", "expected key=value");
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string flag = "--" + key;
    if (key == "config" || sub.get_option_no_throw(flag) == nullptr) {
      throw ParseError(lineno, key, "unknown option for '" + sub.get_name() + "'");
    }
    const bool given = std::any_of(argv.begin(), argv.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) out.push_back(flag + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

void add_seed(CLI::App* sub, std::uint64_t& seed) {
  sub->add_option("--seed", seed, "random seed")->envname("CGE_SEED")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Customized graph embedding toolkit"};
  std::string config_path;
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a stochastic block model dataset");
  g->add_option("--config", config_path, "key=value file; flags win");
  g->add_option("--out", gen.out, "dataset file")->required();
  g->add_option("--blocks", gen.blocks)->capture_default_str();
  g->add_option("--nodes-per-block", gen.nodes_per_block)->capture_default_str();
  g->add_option("--p-in", gen.p_in)->capture_default_str();
  g->add_option("--p-out", gen.p_out)->capture_default_str();
  g->add_option("--labels-per-block", gen.labels_per_block)->capture_default_str();
  g->add_option("--feature-dim", gen.feature_dim)->capture_default_str();
  g->add_option("--feature-noise", gen.feature_noise)->capture_default_str();
  g->add_option("--noise-nodes", gen.noise_nodes, "unlabelled nodes wired at random")->capture_default_str();
  g->add_option("--noise-degree", gen.noise_degree)->capture_default_str();
  add_seed(g, gen.seed);

  auto corpus_flags = [](CLI::App* sub, CorpusConfig& c) {
    sub->add_option("--walks-per-node", c.walks_per_node)->capture_default_str();
    sub->add_option("--max-len", c.max_len)->capture_default_str();
    sub->add_option("--window", c.window)->capture_default_str();
    sub->add_option("--pairs-per-class", c.pairs_per_class)->capture_default_str();
  };

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "build the sub-path corpus");
  s->add_option("--config", config_path, "key=value file; flags win");
  s->add_option("--dataset", sample.dataset)->required()->check(CLI::ExistingFile);
  s->add_option("--out", sample.out, "corpus file")->required();
  corpus_flags(s, sample.corpus);
  add_seed(s, sample.seed);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", config_path, "key=value file; flags win");
  t->add_option("--dataset", tr.dataset)->required()->check(CLI::ExistingFile);
  t->add_option("--corpus", tr.corpus, "corpus file; built from the dataset when omitted")
      ->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "run directory")->required();
  t->add_option("--mode", tr.mode)->check(CLI::IsMember({"transductive", "inductive"}))->capture_default_str();
  t->add_option("--reweight", tr.reweight)
      ->check(CLI::IsMember({"average", "cnn", "lstm", "fixed"}))
      ->capture_default_str();
  t->add_option("--order", tr.order)->check(CLI::IsMember({"first", "second"}))->capture_default_str();
  t->add_option("--lambda", tr.cfg.lambda)->check(CLI::NonNegativeNumber)->capture_default_str();
  t->add_option("--xi", tr.cfg.xi, "virtual step size (default: lr-alpha)")->check(CLI::NonNegativeNumber);
  t->add_option("--lr-alpha", tr.cfg.lr_alpha)->check(CLI::NonNegativeNumber)->capture_default_str();
  t->add_option("--lr-wa", tr.cfg.lr_wa)->check(CLI::NonNegativeNumber)->capture_default_str();
  t->add_option("--dim", tr.cfg.embed_dim)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--head-dim", tr.cfg.head_dim)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--lstm-hidden", tr.cfg.lstm_hidden, "0 means the embedding size")->capture_default_str();
  t->add_option("--batch", tr.cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--neg", tr.cfg.negatives, "negative samples; 0 uses the full softmax")->capture_default_str();
  t->add_option("--steps", tr.cfg.max_steps)->capture_default_str();
  t->add_option("--patience", tr.cfg.patience, "0 disables early stopping")->capture_default_str();
  t->add_option("--lambda-in-inner", tr.cfg.lambda_in_inner)->capture_default_str();
  corpus_flags(t, tr.cfg.corpus);
  add_seed(t, tr.cfg.seed);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "test-split accuracy of a trained run");
  e->add_option("--config", config_path, "key=value file; flags win");
  e->add_option("--dataset", ev.dataset)->required()->check(CLI::ExistingFile);
  e->add_option("--run", ev.run, "train run directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "report file (default: <run>/eval.json)");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "weight statistics, relevance and correlations");
  a->add_option("--config", config_path, "key=value file; flags win");
  a->add_option("--weights", an.weights, "weights.csv files, one per target-class run")
      ->required()
      ->check(CLI::ExistingFile);
  a->add_option("--targets", an.targets, "target classes (default: all)")->delimiter(',');
  a->add_option("--classes", an.classes, "category count (default: from the data)");
  a->add_option("--out", an.out, "output directory")->required();

  try {
    std::vector<std::string> args(argv, argv + argc);
    CLI::App* sub = argc > 1 ? app.get_subcommand_no_throw(args[1]) : nullptr;
    for (std::size_t i = 2; sub != nullptr && i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      for (auto& extra : config_args(path, *sub, args)) args.push_back(std::move(extra));
      break;
    }
    std::vector<char*> ptrs;
    for (auto& x : args) ptrs.push_back(x.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }

  try {
    if (*g) cmd_gen(gen);
    if (*s) cmd_sample(sample);
    if (*t) cmd_train(tr);
    if (*e) cmd_eval(ev);
    if (*a) cmd_analyze(an);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
