// soc2seq: command-line driver for the persona-conditioned conversation
// pipeline. Exit codes: 0 ok, 1 numeric failure, 2 I/O, 3 empty graph, 4 config.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "soc2seq/soc2seq.hpp"

namespace fs = std::filesystem;
using namespace soc2seq;

namespace {

constexpr int kExitNumeric = 1;
constexpr int kExitIo = 2;
constexpr int kExitEmptyGraph = 3;
constexpr int kExitConfig = 4;

constexpr const char* kDefaultsFooter = R"(
Defaults (reference recipe / desk scale):
  beam.size                 200 / 8
  beam.max_len               20 / 20
  train.learning_rate       1.0 / 1.0    (halved per epoch after train.decay_start_epoch)
  train.clip_threshold        5 / 5      (global L2 norm)
  train.batch_size          128 / 16
  train.epochs               20 / 20
  model.dropout            0.25 / 0.25
  corpus.max_vocab       100000 / 10000
  model.hidden             1000 / 64
  model.layers                4 / 2
  model.persona_dim         300 / 300    (location 100+100+100, user comment 150 + like 150)

Any key can be set in the --config file ([section] key = value) or with
--set section.key=value. Exit codes: 0 ok, 1 numeric failure, 2 I/O, 3 empty graph, 4 config.)";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI-style config file");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set train.epochs=2")->take_all();
  cmd->add_option("--seed", c.seed, "seed for every stochastic step (overrides the config)");
}

PipelineConfig resolve(const Common& c) {
  if (!c.config_path.empty() && !fs::exists(c.config_path)) throw IoError("no such file: " + c.config_path);
  auto cfg = load_config(c.config_path, c.overrides);
  if (c.seed) cfg.seed = *c.seed;
  cfg.propagate_seed();
  return cfg;
}

void require_path(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path);
}

std::string in_dir(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

// --- ingested corpus directory -----------------------------------------------
// pairs.jsonl (tokenized), vocab.txt, split.json (seed + ratios, so later
// commands reproduce the split that built the vocabulary).

struct Corpus {
  Vocabulary vocab;
  DatasetSplit split;
};

Corpus load_corpus(const std::string& dir) {
  for (const char* f : {"pairs.jsonl", "vocab.txt", "split.json"}) require_path(in_dir(dir, f));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(in_dir(dir, "split.json")));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(in_dir(dir, "split.json") + ": " + e.what());
  }
  const auto ratios = meta.at("ratios").get<std::array<double, 3>>();
  Corpus c{Vocabulary::load(in_dir(dir, "vocab.txt")), {}};
  const auto pairs = encode_pairs(read_tokenized_pairs(in_dir(dir, "pairs.jsonl")), c.vocab);
  c.split = split_dataset(pairs, ratios, meta.at("seed").get<std::uint64_t>());
  return c;
}

const std::vector<ConversationPair>& pick_split(const Corpus& c, const std::string& name) {
  if (name == "train") return c.split.train;
  if (name == "validation") return c.split.validation;
  if (name == "test") return c.split.test;
  throw ConfigError("unknown split '" + name + "' (train, validation, test)");
}

Model load_matching(const std::string& ckpt, const Vocabulary& vocab) {
  require_path(ckpt);
  auto m = load_checkpoint(ckpt);
  if (m.vocab_hash != vocab.hash()) {
    throw ConfigError("checkpoint " + ckpt + " was trained with vocabulary " + m.vocab_hash + ", corpus has " +
                      vocab.hash());
  }
  return m;
}

void print_epochs(const TrainReport& r) {
  for (const auto& e : r.epochs) {
    std::cout << "epoch " << e.epoch << " lr=" << format_double(e.learning_rate)
              << " train_loss=" << format_double(e.train_loss);
    if (e.validation_perplexity) std::cout << " valid_ppl=" << format_double(*e.validation_perplexity);
    std::cout << '\n';
  }
}

void finish_training(const TrainResult& r, const std::string& out) {
  save_checkpoint(r.model, in_dir(out, "model.ckpt"));
  write_train_report(r.report, out);
  print_epochs(r.report);
  std::cout << "model=" << variant_label(r.model) << " checkpoint=" << in_dir(out, "model.ckpt") << '\n';
}

// --- commands -----------------------------------------------------------------

int cmd_ingest(const PipelineConfig& cfg, const std::string& input, const std::string& stoplist_path,
               const std::string& out) {
  require_path(input);
  if (!stoplist_path.empty()) require_path(stoplist_path);
  const auto stoplist = stoplist_path.empty() ? Stoplist{} : load_stoplist(stoplist_path);
  FilterStats stats;
  const auto kept = filter_pairs(read_raw_pairs(input), stoplist, &stats);
  // vocabulary comes from the training portion only
  const auto split = split_dataset(kept, cfg.split, cfg.seed);
  const auto vocab = build_vocab(split.train, cfg.max_vocab);
  fs::create_directories(out);
  write_tokenized_pairs(in_dir(out, "pairs.jsonl"), kept);
  vocab.save(in_dir(out, "vocab.txt"));
  {
    auto f = open_output(in_dir(out, "split.json"));
    f << nlohmann::ordered_json{{"seed", cfg.seed}, {"ratios", cfg.split}}.dump() << '\n';
  }
  std::cout << "total=" << stats.total << " retained=" << stats.retained << " dropped_short=" << stats.dropped_short
            << " dropped_stoplist=" << stats.dropped_stoplist << " vocab=" << vocab.size() << '\n';
  return 0;
}

InteractionGraph graph_for(const std::vector<InteractionEvent>& events, const std::vector<Signal>& signals) {
  std::vector<InteractionGraph> graphs;
  for (auto s : signals) graphs.push_back(build_interaction_graph(events, s));
  auto g = graphs.size() == 1 ? graphs.front() : combine_graphs(graphs);
  if (g.empty()) throw EmptyGraphError("interaction graph has no edges");
  return g;
}

int cmd_build_graph(const PipelineConfig& cfg, const std::string& events_path, const std::string& out) {
  require_path(events_path);
  const auto g = graph_for(read_events(events_path), cfg.signals);
  g.save(out);
  std::cout << "nodes=" << g.num_nodes() << " edges=" << g.num_edges() << '\n';
  return 0;
}

// Comment and like tables take the model's persona split so their
// concatenation is a user persona; other signals use skipgram.dim.
Eigen::Index dim_for(const PipelineConfig& cfg, Signal s) {
  if (s == Signal::comment) return cfg.model.comment_dim;
  if (s == Signal::like) return cfg.model.like_dim();
  return cfg.skipgram.dim;
}

void embed_to(const InteractionGraph& g, const PipelineConfig& cfg, Eigen::Index dim, const std::string& path) {
  auto sg = cfg.skipgram;
  sg.dim = dim;
  auto table = embed_graph(g, cfg.walk, sg);
  table.set_level("");
  table.save(path);
  std::cout << path << ": " << table.size() << " x " << table.dim() << '\n';
}

int cmd_embed(const PipelineConfig& cfg, const std::string& events_path, const std::string& graph_path,
              const std::string& out) {
  if (events_path.empty() == graph_path.empty()) throw ConfigError("embed needs exactly one of --events, --graph");
  if (!graph_path.empty()) {
    require_path(graph_path);
    embed_to(InteractionGraph::load(graph_path), cfg, cfg.skipgram.dim, out);
    return 0;
  }
  require_path(events_path);
  const auto events = read_events(events_path);
  fs::create_directories(out);
  for (auto s : cfg.signals) {
    embed_to(graph_for(events, {s}), cfg, dim_for(cfg, s), in_dir(out, (std::string(to_string(s)) + ".emb").c_str()));
  }
  return 0;
}

int cmd_train(PipelineConfig cfg, const std::string& data, const std::string& social_dir, const std::string& out) {
  const auto corpus = load_corpus(data);
  cfg.model.vocab_size = static_cast<Eigen::Index>(corpus.vocab.size());
  std::optional<SocialTables> social;
  if (!social_dir.empty()) {
    if (cfg.model.persona_kind != PersonaKind::user || !cfg.model.uses_persona()) {
      throw ConfigError("--social needs model.persona_kind = user and a persona_mode other than none");
    }
    for (const char* f : {"comment.emb", "like.emb"}) require_path(in_dir(social_dir, f));
    social = SocialTables{EmbeddingTable::load(in_dir(social_dir, "comment.emb")),
                          EmbeddingTable::load(in_dir(social_dir, "like.emb")), "node2vec"};
  }
  fs::create_directories(out);
  cfg.train.checkpoint_dir = in_dir(out, "checkpoints");
  finish_training(train(cfg.model, cfg.train, corpus.split, corpus.vocab.hash(), social), out);
  return 0;
}

int cmd_finetune(PipelineConfig cfg, const std::string& ckpt, const std::string& data, const std::string& out) {
  const auto corpus = load_corpus(data);
  auto model = load_matching(ckpt, corpus.vocab);
  fs::create_directories(out);
  cfg.train.checkpoint_dir = in_dir(out, "checkpoints");
  finish_training(fine_tune_social(std::move(model), cfg.train, corpus.split), out);
  return 0;
}

int cmd_decode(PipelineConfig cfg, const std::string& ckpt, const std::string& data, const std::string& split,
               bool greedy, const std::string& out) {
  const auto corpus = load_corpus(data);
  const auto model = load_matching(ckpt, corpus.vocab);
  if (greedy) {
    cfg.beam.beam = 1;
    cfg.beam.n_best = 1;
  }
  std::ofstream file;
  if (!out.empty()) file = open_output(out);
  std::ostream& os = out.empty() ? std::cout : file;
  for (const auto& p : pick_split(corpus, split)) os << decode_record(model, corpus.vocab, p, cfg.beam).dump() << '\n';
  if (!os) throw IoError("write failed: " + (out.empty() ? std::string("<stdout>") : out));
  return 0;
}

int cmd_eval(const PipelineConfig& cfg, const std::vector<std::string>& ckpts, const std::vector<std::string>& labels,
             const std::string& data, const std::string& split, const std::string& out) {
  if (!labels.empty() && labels.size() != ckpts.size()) throw ConfigError("give one --label per --checkpoint");
  const auto corpus = load_corpus(data);
  std::vector<Model> models;
  for (const auto& c : ckpts) models.push_back(load_matching(c, corpus.vocab));
  std::vector<EvalModel> list;
  for (std::size_t i = 0; i < models.size(); ++i) list.push_back({&models[i], labels.empty() ? "" : labels[i]});
  const auto reports = evaluate(list, pick_split(corpus, split), cfg.beam);
  const auto table = format_table(reports);
  std::cout << table;
  if (!out.empty()) {
    fs::create_directories(out);
    open_output(in_dir(out, "eval.json")) << to_json(reports).dump(2) << '\n';
    open_output(in_dir(out, "table.txt")) << table;
  }
  return 0;
}

// Location keys are "county,city,country"; user keys are the user id.
PairMeta persona_meta(const Model& m, const std::string& key, std::ostream& err) {
  PairMeta meta;
  if (!m.config.uses_persona() || key.empty()) return meta;
  bool known = true;
  if (m.config.persona_kind == PersonaKind::location) {
    const auto parts = detail::split_list(key);
    meta.location = {parts[0], parts.size() > 1 ? parts[1] : "", parts.size() > 2 ? parts[2] : ""};
    known = parts.size() == 3 && m.params.location.county.contains(meta.location.county) &&
            m.params.location.city.contains(meta.location.city) &&
            m.params.location.country.contains(meta.location.country);
  } else {
    meta.replier_user = key;
    known = m.params.user.comment.contains(key);
  }
  if (!known) err << "warning: unknown persona key '" << key << "', using the fallback persona\n";
  return meta;
}

int cmd_repl(const PipelineConfig& cfg, const std::string& ckpt, const std::string& vocab_path, std::string key,
             std::istream& in, std::ostream& os, std::ostream& err) {
  require_path(vocab_path);
  const auto vocab = Vocabulary::load(vocab_path);
  const auto model = load_matching(ckpt, vocab);
  auto meta = persona_meta(model, key, err);
  std::string line;
  while (std::getline(in, line)) {
    const auto t = std::string(trim(line));
    if (t.empty()) continue;
    if (t == ":quit") break;
    if (t.rfind(":persona", 0) == 0) {
      key = std::string(trim(std::string_view(t).substr(8)));
      meta = persona_meta(model, key, err);
      os << "persona: " << (key.empty() ? "<none>" : key) << '\n';
      continue;
    }
    ConversationPair p{vocab.encode(tokenize(t)), {}, meta};
    p.post.push_back(kEos);
    const auto r = beam_search(model, p, cfg.beam);
    std::size_t rank = 0;
    for (const auto& h : r.hypotheses) {
      os << ++rank << '\t' << format_double(h.score) << '\t' << join(vocab.decode(h.tokens), " ") << '\n';
    }
    if (r.truncated) os << "(no reply finished within max_len)\n";
    os.flush();
  }
  return 0;
}

int cmd_synth(const PipelineConfig& cfg, const PersonaSpecOptions& opts, const SocialEventConfig& ev,
              const std::string& out) {
  const auto spec = make_persona_spec(opts);
  const auto corpus = generate_synthetic_corpus(spec, cfg.seed);
  fs::create_directories(out);
  write_raw_pairs(in_dir(out, "raw.jsonl"), corpus.pairs);
  write_events(in_dir(out, "events.jsonl"), generate_social_events(spec, ev, cfg.seed));
  std::cout << "pairs=" << corpus.pairs.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"soc2seq: persona-conditioned seq2seq conversation pipeline"};
  app.footer(kDefaultsFooter);
  app.require_subcommand(1);
  Common common;
  std::string input, stoplist, out, events, graph, data, social, ckpt, vocab, persona, split = "test";
  std::vector<std::string> ckpts, labels;
  bool greedy = false;
  PersonaSpecOptions synth_opts;
  SocialEventConfig synth_events;

  auto* ingest = app.add_subcommand("ingest", "filter raw pairs, build the vocabulary");
  ingest->add_option("--input", input, "raw pairs (JSON lines)")->required();
  ingest->add_option("--stoplist", stoplist, "one banned token per line");
  ingest->add_option("--out", out, "output corpus directory")->required();

  auto* build_graph = app.add_subcommand("build-graph", "interaction graph from event logs (graph.signals)");
  build_graph->add_option("--events", events, "events (JSON lines)")->required();
  build_graph->add_option("--out", out, "edge list output")->required();

  auto* embed = app.add_subcommand("embed", "node2vec embeddings; one table per signal from --events");
  embed->add_option("--events", events, "events (JSON lines); writes <signal>.emb into --out");
  embed->add_option("--graph", graph, "edge list; writes one table to --out");
  embed->add_option("--out", out, "output directory (--events) or file (--graph)")->required();

  auto* train_cmd = app.add_subcommand("train", "train a conversation model");
  train_cmd->add_option("--data", data, "ingested corpus directory")->required();
  train_cmd->add_option("--social", social, "directory with comment.emb and like.emb");
  train_cmd->add_option("--out", out, "run directory")->required();

  auto* finetune = app.add_subcommand("finetune", "release and tune pretrained social user rows");
  finetune->add_option("--checkpoint", ckpt, "social-user model.ckpt")->required();
  finetune->add_option("--data", data, "ingested corpus directory")->required();
  finetune->add_option("--out", out, "run directory")->required();

  auto* decode = app.add_subcommand("decode", "beam-search replies for a split (JSON lines)");
  decode->add_option("--checkpoint", ckpt, "model.ckpt")->required();
  decode->add_option("--data", data, "ingested corpus directory")->required();
  decode->add_option("--split", split, "train, validation or test");
  decode->add_flag("--greedy", greedy, "beam 1, one reply");
  decode->add_option("--out", out, "output file (default stdout)");

  auto* eval = app.add_subcommand("eval", "perplexity and ROUGE for one or more checkpoints");
  eval->add_option("--checkpoint", ckpts, "one model.ckpt per table row")->required();
  eval->add_option("--label", labels, "row label per checkpoint (default: model variant)");
  eval->add_option("--data", data, "ingested corpus directory")->required();
  eval->add_option("--split", split, "train, validation or test");
  eval->add_option("--out", out, "directory for eval.json and table.txt");

  auto* repl = app.add_subcommand("repl", "type posts, get n-best replies; :persona <key>, :quit");
  repl->add_option("--checkpoint", ckpt, "model.ckpt")->required();
  repl->add_option("--vocab", vocab, "vocab.txt of the training corpus")->required();
  repl->add_option("--persona", persona, "location \"county,city,country\" or user id");

  auto* synth = app.add_subcommand("synth", "synthetic persona corpus and social events");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--personas", synth_opts.personas, "number of personas");
  synth->add_option("--prompts", synth_opts.prompts, "number of prompts");
  synth->add_option("--users", synth_opts.users_per_persona, "users per persona");
  synth->add_option("--pairs", synth_opts.pairs, "number of conversation pairs");
  synth->add_option("--own-mass", synth_opts.own_phrase_mass, "probability of the persona's own phrase");
  synth->add_option("--intra", synth_events.intra_persona_probability, "probability an event stays in-persona");

  for (auto* cmd : {ingest, build_graph, embed, train_cmd, finetune, decode, eval, repl, synth}) {
    add_common(cmd, common);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = resolve(common);
    if (*ingest) return cmd_ingest(cfg, input, stoplist, out);
    if (*build_graph) return cmd_build_graph(cfg, events, out);
    if (*embed) return cmd_embed(cfg, events, graph, out);
    if (*train_cmd) return cmd_train(cfg, data, social, out);
    if (*finetune) return cmd_finetune(cfg, ckpt, data, out);
    if (*decode) return cmd_decode(cfg, ckpt, data, split, greedy, out);
    if (*eval) return cmd_eval(cfg, ckpts, labels, data, split, out);
    if (*repl) return cmd_repl(cfg, ckpt, vocab, persona, std::cin, std::cout, std::cerr);
    if (*synth) return cmd_synth(cfg, synth_opts, synth_events, out);
  } catch (const EmptyGraphError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEmptyGraph;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ColdStartError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitIo;
  }
  return 0;
}
