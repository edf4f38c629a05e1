#include "experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "error.hpp"
#include "json.hpp"

namespace haca {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string to_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw Error(ErrorCode::Usage, std::string("config section '") + where + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end()) {
      throw Error(ErrorCode::Usage,
                  std::string("unknown config key '") + key + "' in section '" + where + "'");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Data, "cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

}  // namespace

BindingGenConfig::BindingGenConfig() {
  const auto kinds = all_corruption_kinds();
  categories.assign(kinds.begin(), kinds.end());
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.retrieval = {
      {"temporal", 18, 12, 216, 1},
      {"events", 12, 8, 120, 2},
  };
  return cfg;
}

namespace {

json objective_to_json(const ObjectiveConfig& o) {
  json weights = json::object();
  for (int i = 0; i < kCorruptionKindCount; ++i) {
    weights[std::string(corruption_kind_name(static_cast<CorruptionKind>(i)))] =
        o.corruption_weights[static_cast<size_t>(i)];
  }
  return {{"task", std::string(objective_task_name(o.task))},
          {"mask_ratio", o.mask_ratio},
          {"mix_ratio", o.mix_ratio},
          {"pos_neg_ratio", o.pos_neg_ratio},
          {"corruption_weights", weights}};
}

ObjectiveConfig objective_from_json(const json& j) {
  check_keys(j, "objective",
             {"task", "mask_ratio", "mix_ratio", "pos_neg_ratio", "corruption_weights"});
  ObjectiveConfig o;
  if (auto it = j.find("task"); it != j.end()) {
    o.task = objective_task_from_name(it->get<std::string>());
  }
  read_field(j, "mask_ratio", o.mask_ratio);
  read_field(j, "mix_ratio", o.mix_ratio);
  read_field(j, "pos_neg_ratio", o.pos_neg_ratio);
  if (auto it = j.find("corruption_weights"); it != j.end()) {
    for (const auto& [name, value] : it->items()) {
      const auto kind = corruption_kind_from_name(name);
      o.corruption_weights[static_cast<size_t>(kind)] = value.get<double>();
    }
  }
  return o;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Usage, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "top level",
             {"seed", "n_seeds", "generation", "objective", "train", "model", "eval"});

  ExperimentConfig cfg = defaults();
  read_field(j, "seed", cfg.seed);
  read_field(j, "n_seeds", cfg.n_seeds);
  if (cfg.n_seeds < 1) throw Error(ErrorCode::Usage, "n_seeds must be >= 1");

  if (auto it = j.find("generation"); it != j.end()) {
    const json& g = *it;
    check_keys(g, "generation",
               {"agents", "actions", "objects", "modifiers", "videos", "train_fraction",
                "val_fraction", "test_fraction", "test_pair_fraction", "min_events", "max_events",
                "modifier_prob", "binding", "retrieval"});
    read_field(g, "agents", cfg.generation.agents);
    read_field(g, "actions", cfg.generation.actions);
    read_field(g, "objects", cfg.generation.objects);
    read_field(g, "modifiers", cfg.generation.modifiers);
    read_field(g, "videos", cfg.generation.videos);
    read_field(g, "train_fraction", cfg.generation.train_fraction);
    read_field(g, "val_fraction", cfg.generation.val_fraction);
    read_field(g, "test_fraction", cfg.generation.test_fraction);
    read_field(g, "test_pair_fraction", cfg.generation.test_pair_fraction);
    read_field(g, "min_events", cfg.generation.min_events);
    read_field(g, "max_events", cfg.generation.max_events);
    read_field(g, "modifier_prob", cfg.generation.modifier_prob);
    if (auto bit = g.find("binding"); bit != g.end()) {
      check_keys(*bit, "generation.binding",
                 {"tests_per_category", "val_tests_per_category", "categories"});
      read_field(*bit, "tests_per_category", cfg.binding.tests_per_category);
      read_field(*bit, "val_tests_per_category", cfg.binding.val_tests_per_category);
      if (auto cit = bit->find("categories"); cit != bit->end()) {
        cfg.binding.categories.clear();
        for (const auto& name : *cit) {
          cfg.binding.categories.push_back(corruption_kind_from_name(name.get<std::string>()));
        }
      }
    }
    if (auto rit = g.find("retrieval"); rit != g.end()) {
      cfg.retrieval.clear();
      for (const auto& r : *rit) {
        check_keys(r, "generation.retrieval[]",
                   {"name", "queries", "relevant_per_query", "candidates", "events_per_query"});
        RetrievalGenConfig rc;
        rc.name = r.at("name").get<std::string>();
        read_field(r, "queries", rc.queries);
        read_field(r, "relevant_per_query", rc.relevant_per_query);
        read_field(r, "candidates", rc.candidates);
        read_field(r, "events_per_query", rc.events_per_query);
        cfg.retrieval.push_back(std::move(rc));
      }
    }
  }

  if (auto it = j.find("objective"); it != j.end()) cfg.objective = objective_from_json(*it);

  if (auto it = j.find("train"); it != j.end()) {
    const json& t = *it;
    check_keys(t, "train",
               {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps", "weight_decay",
                "grad_clip_norm", "seed", "selection_metric"});
    read_field(t, "epochs", cfg.train.epochs);
    read_field(t, "batch_size", cfg.train.batch_size);
    read_field(t, "learning_rate", cfg.train.learning_rate);
    read_field(t, "beta1", cfg.train.beta1);
    read_field(t, "beta2", cfg.train.beta2);
    read_field(t, "eps", cfg.train.eps);
    read_field(t, "weight_decay", cfg.train.weight_decay);
    read_field(t, "grad_clip_norm", cfg.train.grad_clip_norm);
    read_field(t, "seed", cfg.train.seed);
    read_field(t, "selection_metric", cfg.train.selection_metric);
  }

  if (auto it = j.find("model"); it != j.end()) {
    const json& m = *it;
    check_keys(m, "model", {"d_model", "n_layers", "n_heads", "max_seq_len"});
    read_field(m, "d_model", cfg.model.d_model);
    read_field(m, "n_layers", cfg.model.n_layers);
    read_field(m, "n_heads", cfg.model.n_heads);
    read_field(m, "max_seq_len", cfg.model.max_seq_len);
  }

  if (auto it = j.find("eval"); it != j.end()) {
    check_keys(*it, "eval", {"correction_items"});
    read_field(*it, "correction_items", cfg.eval.correction_items);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json_text(read_text_file(path));
}

namespace {

json generation_to_json(const ExperimentConfig& cfg) {
  json categories = json::array();
  for (auto kind : cfg.binding.categories) {
    categories.push_back(std::string(corruption_kind_name(kind)));
  }
  json retrieval = json::array();
  for (const auto& r : cfg.retrieval) {
    retrieval.push_back({{"name", r.name},
                         {"queries", r.queries},
                         {"relevant_per_query", r.relevant_per_query},
                         {"candidates", r.candidates},
                         {"events_per_query", r.events_per_query}});
  }
  return {{"agents", cfg.generation.agents},
          {"actions", cfg.generation.actions},
          {"objects", cfg.generation.objects},
          {"modifiers", cfg.generation.modifiers},
          {"videos", cfg.generation.videos},
          {"train_fraction", cfg.generation.train_fraction},
          {"val_fraction", cfg.generation.val_fraction},
          {"test_fraction", cfg.generation.test_fraction},
          {"test_pair_fraction", cfg.generation.test_pair_fraction},
          {"min_events", cfg.generation.min_events},
          {"max_events", cfg.generation.max_events},
          {"modifier_prob", cfg.generation.modifier_prob},
          {"binding",
           {{"tests_per_category", cfg.binding.tests_per_category},
            {"val_tests_per_category", cfg.binding.val_tests_per_category},
            {"categories", categories}}},
          {"retrieval", retrieval}};
}

}  // namespace

std::string ExperimentConfig::to_json_text() const {
  const json j{{"seed", seed},
               {"n_seeds", n_seeds},
               {"generation", generation_to_json(*this)},
               {"objective", objective_to_json(objective)},
               {"train",
                {{"epochs", train.epochs},
                 {"batch_size", train.batch_size},
                 {"learning_rate", train.learning_rate},
                 {"beta1", train.beta1},
                 {"beta2", train.beta2},
                 {"eps", train.eps},
                 {"weight_decay", train.weight_decay},
                 {"grad_clip_norm", train.grad_clip_norm},
                 {"seed", train.seed},
                 {"selection_metric", train.selection_metric}}},
               {"model",
                {{"d_model", model.d_model},
                 {"n_layers", model.n_layers},
                 {"n_heads", model.n_heads},
                 {"max_seq_len", model.max_seq_len}}},
               {"eval", {{"correction_items", eval.correction_items}}}};
  return j.dump(2) + "\n";
}

std::string ExperimentConfig::config_hash() const {
  return to_hex(fnv1a64(to_json_text()));
}

std::string ExperimentConfig::generation_hash() const {
  return to_hex(fnv1a64(generation_to_json(*this).dump()));
}

std::string hash_file_hex(const std::string& path) {
  return to_hex(fnv1a64(read_text_file(path)));
}

DataManifest DataManifest::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Data, path + ": " + e.what());
  }
  DataManifest m;
  m.generation_hash = j.at("generation_hash").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  for (const auto& [name, hash] : j.at("files").items()) {
    m.files.emplace_back(name, hash.get<std::string>());
  }
  for (const auto& [name, count] : j.at("counts").items()) {
    m.counts.emplace_back(name, count.get<int>());
  }
  return m;
}

void DataManifest::save(const std::string& path) const {
  json files = json::object();
  for (const auto& [name, hash] : this->files) files[name] = hash;
  json counts = json::object();
  for (const auto& [name, count] : this->counts) counts[name] = count;
  const json j{{"format_version", 1},
               {"generation_hash", generation_hash},
               {"config_hash", config_hash},
               {"dataset_hash", dataset_hash},
               {"files", files},
               {"counts", counts}};
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

// Builds one synthetic retrieval task over the held-out pair pool. Every
// relevant video embeds its query's event pattern in order; fillers and
// distractors avoid all query pairs, so relevance coincides with the parse
// oracle's pattern containment.
RetrievalTask build_retrieval_task(const Corpus& corpus, const RetrievalGenConfig& rcfg, Rng& rng) {
  const Lexicon& lex = corpus.lexicon;
  if (rcfg.queries < 1 || rcfg.relevant_per_query < 1 || rcfg.events_per_query < 1 ||
      rcfg.events_per_query > 2) {
    throw Error(ErrorCode::Usage, "bad retrieval task shape for '" + rcfg.name + "'");
  }
  if (rcfg.candidates < rcfg.queries * rcfg.relevant_per_query) {
    throw Error(ErrorCode::Usage,
                "retrieval task '" + rcfg.name + "' has fewer candidates than relevant videos");
  }
  const auto& pool = corpus.test_pairs;
  const size_t need_pairs = static_cast<size_t>(rcfg.queries) * rcfg.events_per_query;
  if (pool.size() < need_pairs + 3) {
    throw Error(ErrorCode::Data, "test pair pool too small for retrieval task '" + rcfg.name + "'");
  }

  std::vector<std::pair<TokenId, TokenId>> shuffled = pool;
  rng.shuffle(shuffled);
  std::vector<std::vector<Event>> query_events(static_cast<size_t>(rcfg.queries));
  size_t next_pair = 0;
  for (auto& events : query_events) {
    for (int e = 0; e < rcfg.events_per_query; ++e) {
      Event ev;
      ev.agent = shuffled[next_pair].first;
      ev.action = shuffled[next_pair].second;
      ev.object = lex.objects_begin() + static_cast<TokenId>(rng.below(lex.object_count()));
      ++next_pair;
      events.push_back(ev);
    }
  }
  const std::vector<std::pair<TokenId, TokenId>> filler_pool(shuffled.begin() + static_cast<long>(need_pairs),
                                                             shuffled.end());

  struct PendingCandidate {
    std::vector<Event> events;
    int relevant_to = -1;
  };
  std::vector<PendingCandidate> pending;

  auto sample_filler = [&](std::vector<Event>& events, int count) {
    for (int i = 0; i < count; ++i) {
      Event ev;
      size_t pick;
      do {
        pick = rng.below(filler_pool.size());
        ev.agent = filler_pool[pick].first;
        ev.action = filler_pool[pick].second;
      } while (std::any_of(events.begin(), events.end(), [&](const Event& seen) {
        return seen.agent == ev.agent && seen.action == ev.action;
      }));
      ev.object = lex.objects_begin() + static_cast<TokenId>(rng.below(lex.object_count()));
      if (rng.real01() < corpus.config.modifier_prob) {
        ev.modifier = lex.modifiers_begin() + static_cast<TokenId>(rng.below(lex.modifier_count()));
      }
      events.push_back(ev);
    }
  };

  for (int qi = 0; qi < rcfg.queries; ++qi) {
    for (int r = 0; r < rcfg.relevant_per_query; ++r) {
      const auto& pattern = query_events[static_cast<size_t>(qi)];
      const int max_extra = 3 - static_cast<int>(pattern.size());
      const int extra = static_cast<int>(rng.below(static_cast<uint64_t>(max_extra + 1)));
      std::vector<Event> fillers;
      sample_filler(fillers, extra);

      // Interleave: choose increasing slots for the pattern among total events.
      const int total = static_cast<int>(pattern.size()) + extra;
      std::vector<int> slots(static_cast<size_t>(total));
      std::iota(slots.begin(), slots.end(), 0);
      rng.shuffle(slots);
      slots.resize(pattern.size());
      std::sort(slots.begin(), slots.end());

      PendingCandidate cand;
      cand.relevant_to = qi;
      cand.events.resize(static_cast<size_t>(total));
      std::vector<bool> taken(static_cast<size_t>(total), false);
      for (size_t p = 0; p < pattern.size(); ++p) {
        cand.events[static_cast<size_t>(slots[p])] = pattern[p];
        taken[static_cast<size_t>(slots[p])] = true;
      }
      size_t f = 0;
      for (int s = 0; s < total; ++s) {
        if (!taken[static_cast<size_t>(s)]) cand.events[static_cast<size_t>(s)] = fillers[f++];
      }
      pending.push_back(std::move(cand));
    }
  }
  const int distractors = rcfg.candidates - rcfg.queries * rcfg.relevant_per_query;
  for (int i = 0; i < distractors; ++i) {
    PendingCandidate cand;
    const int total = 1 + static_cast<int>(rng.below(3));
    sample_filler(cand.events, total);
    pending.push_back(std::move(cand));
  }

  // Ids are assigned after shuffling so tie-breaks do not correlate with
  // relevance.
  rng.shuffle(pending);
  RetrievalTask task;
  task.name = rcfg.name;
  task.queries.resize(static_cast<size_t>(rcfg.queries));
  for (int qi = 0; qi < rcfg.queries; ++qi) {
    task.queries[static_cast<size_t>(qi)].caption =
        render_caption(query_events[static_cast<size_t>(qi)], lex);
  }
  for (size_t i = 0; i < pending.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s%04zu", rcfg.name.c_str(), i);
    RetrievalCandidate cand;
    cand.video_id = id;
    cand.feature_tokens = render_features(pending[i].events, lex);
    if (pending[i].relevant_to >= 0) {
      task.queries[static_cast<size_t>(pending[i].relevant_to)].relevant_video_ids.push_back(id);
    }
    task.candidates.push_back(std::move(cand));
  }
  task.validate();
  return task;
}

}  // namespace

void pipeline_gen_data(const ExperimentConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Rng rng = Rng(config.seed).child("gen");

  Rng corpus_rng = rng.child("corpus");
  Corpus corpus = generate_corpus(config.generation, corpus_rng);

  Rng binding_val_rng = rng.child("binding-val");
  const auto binding_val = build_binding_testset(corpus, Split::Val, config.binding.categories,
                                                 config.binding.val_tests_per_category,
                                                 binding_val_rng);
  Rng binding_test_rng = rng.child("binding-test");
  const auto binding_test = build_binding_testset(corpus, Split::Test, config.binding.categories,
                                                  config.binding.tests_per_category,
                                                  binding_test_rng);

  DataManifest manifest;
  manifest.generation_hash = config.generation_hash();
  manifest.config_hash = config.config_hash();

  const auto dir = fs::path(out_dir);
  write_text_file((dir / "config.json").string(), config.to_json_text());
  write_corpus_jsonl(corpus, (dir / "corpus.jsonl").string());
  write_binding_tests_jsonl(binding_val, (dir / "binding_val.jsonl").string());
  write_binding_tests_jsonl(binding_test, (dir / "binding_test.jsonl").string());

  std::vector<std::string> file_names = {"corpus.jsonl", "binding_val.jsonl", "binding_test.jsonl"};
  manifest.counts.emplace_back("train", static_cast<int>(corpus.split_indices(Split::Train).size()));
  manifest.counts.emplace_back("val", static_cast<int>(corpus.split_indices(Split::Val).size()));
  manifest.counts.emplace_back("test", static_cast<int>(corpus.split_indices(Split::Test).size()));
  manifest.counts.emplace_back("binding_val", static_cast<int>(binding_val.size()));
  manifest.counts.emplace_back("binding_test", static_cast<int>(binding_test.size()));

  for (const auto& rcfg : config.retrieval) {
    Rng task_rng = rng.child("retrieval-" + rcfg.name);
    const RetrievalTask task = build_retrieval_task(corpus, rcfg, task_rng);
    const std::string file_name = "retrieval_" + rcfg.name + ".json";
    write_retrieval_task_json(task, (dir / file_name).string());
    file_names.push_back(file_name);
    manifest.counts.emplace_back("retrieval_" + rcfg.name + "_queries",
                                 static_cast<int>(task.queries.size()));
    manifest.counts.emplace_back("retrieval_" + rcfg.name + "_candidates",
                                 static_cast<int>(task.candidates.size()));
  }

  uint64_t combined = 0xcbf29ce484222325ull;
  for (const auto& name : file_names) {
    const std::string h = hash_file_hex((dir / name).string());
    manifest.files.emplace_back(name, h);
    combined = fnv1a64(name, combined);
    combined = fnv1a64(h, combined);
  }
  manifest.dataset_hash = to_hex(combined);
  manifest.save((dir / "manifest.json").string());
}

namespace {

struct LoadedData {
  ExperimentConfig config;
  DataManifest manifest;
};

LoadedData load_data_dir(const std::optional<std::string>& config_path,
                         const std::string& data_dir) {
  const auto dir = fs::path(data_dir);
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorCode::Data, "no manifest.json in data dir: " + data_dir);
  }
  LoadedData data;
  data.manifest = DataManifest::load((dir / "manifest.json").string());
  data.config = ExperimentConfig::load(
      config_path ? *config_path : (dir / "config.json").string());
  if (data.config.generation_hash() != data.manifest.generation_hash) {
    throw Error(ErrorCode::Comparability,
                "config generation section does not match the data dir (" +
                    data.config.generation_hash() + " vs " + data.manifest.generation_hash + ")");
  }
  return data;
}

json train_report_to_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_binding_accuracy", e.val_binding_accuracy}});
  }
  return {{"objective", report.objective},
          {"seed", report.seed},
          {"selection_metric", report.selection_metric},
          {"initial_train_loss", report.initial_train_loss},
          {"epochs", epochs},
          {"selected_epoch", report.selected_epoch},
          {"diverged", report.diverged},
          {"wall_clock_seconds", report.wall_clock_seconds}};
}

}  // namespace

TrainRunPaths pipeline_train(const std::optional<std::string>& config_path,
                             const std::string& data_dir, const std::string& objective_name,
                             std::optional<double> mask_ratio, std::optional<uint64_t> seed,
                             const std::string& out_dir, bool dump_text,
                             const ProgressFn& progress) {
  LoadedData data = load_data_dir(config_path, data_dir);
  ExperimentConfig& cfg = data.config;
  cfg.objective.task = objective_task_from_name(objective_name);
  if (mask_ratio) cfg.objective.mask_ratio = *mask_ratio;
  if (seed) cfg.train.seed = *seed;

  const auto dir = fs::path(data_dir);
  const Corpus corpus = load_corpus_jsonl(cfg.generation, (dir / "corpus.jsonl").string());
  const auto val_tests = load_binding_tests_jsonl((dir / "binding_val.jsonl").string());

  TrainResult result = train(corpus, cfg.objective, cfg.train, cfg.model, val_tests, progress);

  fs::create_directories(out_dir);
  const auto out = fs::path(out_dir);
  TrainRunPaths paths;
  paths.config = (out / "config.json").string();
  paths.checkpoint = (out / "checkpoint.bin").string();
  paths.report = (out / "train_report.json").string();

  write_text_file(paths.config, cfg.to_json_text());
  CheckpointMeta meta;
  meta.objective = objective_name;
  meta.seed = cfg.train.seed;
  meta.dataset_hash = data.manifest.dataset_hash;
  meta.config_hash = cfg.config_hash();
  save_checkpoint(result.params, meta, paths.checkpoint);
  write_text_file(paths.report, train_report_to_json(result.report).dump(2) + "\n");

  if (dump_text) {
    Rng dump_rng = Rng(cfg.train.seed).child("data");
    const auto examples = build_training_set(corpus, Split::Train, cfg.objective, dump_rng);
    write_training_set_jsonl(examples, (out / "training_set.jsonl").string());
    write_training_set_text(examples, corpus.lexicon, (out / "training_set.txt").string());
  }

  if (result.report.diverged) {
    throw Error(ErrorCode::Training,
                "training diverged; last good checkpoint written to " + paths.checkpoint);
  }
  return paths;
}

std::string pipeline_eval(const std::string& checkpoint_path, const std::string& data_dir,
                          const std::string& out_dir,
                          const std::optional<std::string>& scores_out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  LoadedData data = load_data_dir(std::nullopt, data_dir);
  const ExperimentConfig& cfg = data.config;

  if (ckpt.meta.dataset_hash != data.manifest.dataset_hash) {
    throw Error(ErrorCode::Comparability,
                "checkpoint was trained on different data (" + ckpt.meta.dataset_hash + " vs " +
                    data.manifest.dataset_hash + ")");
  }

  const auto dir = fs::path(data_dir);
  const Corpus corpus = load_corpus_jsonl(cfg.generation, (dir / "corpus.jsonl").string());
  if (ckpt.params.config.text_vocab_size != corpus.lexicon.text_vocab_size() ||
      ckpt.params.config.visual_vocab_size != corpus.lexicon.visual_vocab_size()) {
    throw Error(ErrorCode::Comparability, "checkpoint vocabulary does not match the data dir");
  }

  const auto binding_tests = load_binding_tests_jsonl((dir / "binding_test.jsonl").string());
  const VideoLookup videos(corpus);

  EvalReport report;
  report.checkpoint_id = hash_file_hex(checkpoint_path);
  report.objective = ckpt.meta.objective;
  report.seed = ckpt.meta.seed;
  report.dataset_hash = data.manifest.dataset_hash;
  report.config_hash = ckpt.meta.config_hash;

  report.binding = binding_accuracy(ckpt.params, corpus.lexicon, binding_tests, videos);

  std::vector<RetrievalTask> tasks;
  for (const auto& rcfg : cfg.retrieval) {
    tasks.push_back(load_retrieval_task_json((dir / ("retrieval_" + rcfg.name + ".json")).string()));
  }
  for (const auto& task : tasks) {
    report.retrieval[task.name] = retrieval_map(ckpt.params, corpus.lexicon, task);
  }

  // Correction protocol: held-out negatives drawn evenly across categories.
  std::vector<CorrectionItem> items;
  {
    std::map<std::string, std::vector<const BindingTest*>> by_category;
    for (const auto& t : binding_tests) {
      by_category[std::string(corruption_kind_name(t.category))].push_back(&t);
    }
    size_t round = 0;
    while (static_cast<int>(items.size()) < cfg.eval.correction_items) {
      bool any = false;
      for (auto& [name, list] : by_category) {
        if (round < list.size() && static_cast<int>(items.size()) < cfg.eval.correction_items) {
          const BindingTest& t = *list[round];
          const VideoRecord& rec = videos.at(t.video_id);
          items.push_back({t.video_id, rec.video.feature_tokens, rec.video.events, t.negative,
                           t.positive});
          any = true;
        }
      }
      if (!any) break;
      ++round;
    }
  }
  report.correction = correction_quality(ckpt.params, corpus.lexicon, items);

  fs::create_directories(out_dir);
  const auto out = fs::path(out_dir);
  const std::string report_path = (out / "eval_report.json").string();
  write_text_file(report_path, eval_report_to_json(report));
  write_text_file((out / "eval_report.txt").string(), eval_report_to_text(report));

  if (scores_out) {
    std::ofstream scores(*scores_out, std::ios::binary);
    if (!scores) throw Error(ErrorCode::Data, "cannot open for writing: " + *scores_out);
    const auto scorer = model_scorer(ckpt.params, corpus.lexicon);
    for (const auto& t : binding_tests) {
      const auto& rec = videos.at(t.video_id);
      const json pos{{"kind", "binding"},
                     {"video_id", t.video_id},
                     {"category", std::string(corruption_kind_name(t.category))},
                     {"side", "positive"},
                     {"yes_probability", scorer(rec.video.feature_tokens, t.positive)}};
      const json neg{{"kind", "binding"},
                     {"video_id", t.video_id},
                     {"category", std::string(corruption_kind_name(t.category))},
                     {"side", "negative"},
                     {"yes_probability", scorer(rec.video.feature_tokens, t.negative)}};
      scores << pos.dump() << '\n' << neg.dump() << '\n';
    }
    for (const auto& task : tasks) {
      const auto& r = report.retrieval[task.name];
      for (const auto& s : r.scores) {
        const json line{{"kind", "retrieval"},
                        {"task", task.name},
                        {"query_index", s.query_index},
                        {"video_id", s.video_id},
                        {"yes_probability", s.score}};
        scores << line.dump() << '\n';
      }
    }
  }
  return report_path;
}

namespace {

struct ParsedEvalReport {
  std::string objective;
  uint64_t seed = 0;
  std::string dataset_hash;
  std::map<std::string, double> binding_per_category;
  double binding_macro = 0.0;
  std::map<std::string, double> retrieval_map;
  double parse_fix_rate = 0.0;
};

ParsedEvalReport parse_eval_report(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Data, path + ": " + e.what());
  }
  ParsedEvalReport r;
  r.objective = j.at("metadata").at("objective").get<std::string>();
  r.seed = j.at("metadata").at("seed").get<uint64_t>();
  r.dataset_hash = j.at("metadata").at("dataset_hash").get<std::string>();
  for (const auto& [name, cat] : j.at("binding").at("per_category").items()) {
    r.binding_per_category[name] = cat.at("accuracy").get<double>();
  }
  r.binding_macro = j.at("binding").at("macro_avg").get<double>();
  for (const auto& [name, task] : j.at("retrieval").items()) {
    r.retrieval_map[name] = task.at("map").get<double>();
  }
  r.parse_fix_rate = j.at("correction").at("parse_fix_rate").get<double>();
  return r;
}

}  // namespace

std::string pipeline_ablate_mask(const std::optional<std::string>& config_path,
                                 const std::string& data_dir, std::span<const double> ratios,
                                 const std::string& out_dir, const ProgressFn& progress) {
  if (ratios.empty()) throw Error(ErrorCode::Usage, "ablate-mask requires at least one ratio");
  for (double r : ratios) {
    if (r < 0.0 || r > 1.0) throw Error(ErrorCode::Usage, "mask ratios must be in [0, 1]");
  }
  LoadedData data = load_data_dir(config_path, data_dir);
  const ExperimentConfig& cfg = data.config;

  fs::create_directories(out_dir);
  const auto out = fs::path(out_dir);
  json rows = json::array();
  std::string table;
  table += "mask-ratio sweep (haca+mask), binding accuracy x100, mean over seeds\n";

  for (double ratio : ratios) {
    char ratio_tag[32];
    std::snprintf(ratio_tag, sizeof(ratio_tag), "ratio_%02d", static_cast<int>(ratio * 100 + 0.5));
    json per_seed = json::array();
    std::map<std::string, double> category_sums;
    double macro_sum = 0.0;
    for (int s = 0; s < cfg.n_seeds; ++s) {
      const uint64_t seed = cfg.train.seed + static_cast<uint64_t>(s);
      const auto run_dir = out / ratio_tag / ("seed_" + std::to_string(seed));
      if (progress) {
        progress("ablate: mask_ratio=" + std::to_string(ratio) + " seed=" + std::to_string(seed));
      }
      const auto train_paths =
          pipeline_train(config_path, data_dir, "haca+mask", ratio, seed,
                         (run_dir / "train").string(), false, progress);
      const auto report_path = pipeline_eval(train_paths.checkpoint, data_dir,
                                             (run_dir / "eval").string(), std::nullopt);
      const auto parsed = parse_eval_report(report_path);
      json seed_row{{"seed", seed},
                    {"binding_macro", parsed.binding_macro},
                    {"per_category", parsed.binding_per_category}};
      per_seed.push_back(seed_row);
      macro_sum += parsed.binding_macro;
      for (const auto& [name, acc] : parsed.binding_per_category) category_sums[name] += acc;
    }
    const double macro_mean = macro_sum / cfg.n_seeds;
    json mean_per_category = json::object();
    for (const auto& [name, sum] : category_sums) mean_per_category[name] = sum / cfg.n_seeds;
    rows.push_back({{"mask_ratio", ratio},
                    {"dataset_hash", data.manifest.dataset_hash},
                    {"per_seed", per_seed},
                    {"mean_binding_macro", macro_mean},
                    {"mean_per_category", mean_per_category}});
    char line[64];
    std::snprintf(line, sizeof(line), "  %3.0f%%  avg %5.1f\n", ratio * 100.0, macro_mean * 100.0);
    table += line;
  }

  const json result{{"dataset_hash", data.manifest.dataset_hash},
                    {"seeds", cfg.n_seeds},
                    {"rows", rows}};
  const std::string json_path = (out / "ablate.json").string();
  write_text_file(json_path, result.dump(2) + "\n");
  write_text_file((out / "ablate.txt").string(), table);
  return json_path;
}

std::string pipeline_compare(std::span<const std::string> report_paths,
                             const std::string& out_dir) {
  if (report_paths.size() < 2) {
    throw Error(ErrorCode::Usage, "compare requires at least two eval reports");
  }
  std::vector<ParsedEvalReport> reports;
  for (const auto& path : report_paths) reports.push_back(parse_eval_report(path));
  for (const auto& r : reports) {
    if (r.dataset_hash != reports.front().dataset_hash) {
      throw Error(ErrorCode::Comparability,
                  "reports were produced on different test sets; refusing to compare");
    }
  }

  // Group by objective, preserving first-appearance order; the first report's
  // objective is the baseline.
  std::vector<std::string> objective_order;
  std::map<std::string, std::vector<const ParsedEvalReport*>> groups;
  for (const auto& r : reports) {
    if (!groups.count(r.objective)) objective_order.push_back(r.objective);
    groups[r.objective].push_back(&r);
  }

  auto group_stats = [](const std::vector<const ParsedEvalReport*>& group) {
    std::map<std::string, double> category_mean;
    double macro_mean = 0.0, macro_min = 1e9, macro_max = -1e9;
    for (const auto* r : group) {
      macro_mean += r->binding_macro;
      macro_min = std::min(macro_min, r->binding_macro);
      macro_max = std::max(macro_max, r->binding_macro);
      for (const auto& [name, acc] : r->binding_per_category) category_mean[name] += acc;
    }
    macro_mean /= static_cast<double>(group.size());
    for (auto& [name, sum] : category_mean) sum /= static_cast<double>(group.size());
    return std::tuple(category_mean, macro_mean, macro_max - macro_min);
  };

  const auto& baseline_name = reports.front().objective;
  const auto [baseline_categories, baseline_macro, baseline_range] =
      group_stats(groups.at(baseline_name));

  json rows = json::array();
  std::string table;
  table += "comparison vs baseline '" + baseline_name + "' (binding accuracy x100)\n";
  for (const auto& name : objective_order) {
    const auto& group = groups.at(name);
    const auto [categories, macro, range] = group_stats(group);
    json per_seed = json::array();
    for (const auto* r : group) {
      per_seed.push_back({{"seed", r->seed}, {"binding_macro", r->binding_macro}});
    }
    json deltas = json::object();
    for (const auto& [cat, acc] : categories) {
      const auto it = baseline_categories.find(cat);
      deltas[cat] = acc - (it == baseline_categories.end() ? 0.0 : it->second);
    }
    rows.push_back({{"objective", name},
                    {"runs", static_cast<int>(group.size())},
                    {"binding_macro_mean", macro},
                    {"binding_macro_range", range},
                    {"per_seed", per_seed},
                    {"per_category_mean", categories},
                    {"per_category_delta_vs_baseline", deltas},
                    {"binding_macro_delta_vs_baseline", macro - baseline_macro}});
    char line[128];
    std::snprintf(line, sizeof(line), "  %-12s macro %5.1f (+/- %4.1f)  delta %+5.1f  (%zu run%s)\n",
                  name.c_str(), macro * 100.0, range * 50.0, (macro - baseline_macro) * 100.0,
                  group.size(), group.size() == 1 ? "" : "s");
    table += line;
  }

  fs::create_directories(out_dir);
  const auto out = fs::path(out_dir);
  const json result{{"baseline", baseline_name},
                    {"dataset_hash", reports.front().dataset_hash},
                    {"rows", rows}};
  const std::string json_path = (out / "compare.json").string();
  write_text_file(json_path, result.dump(2) + "\n");
  write_text_file((out / "compare.txt").string(), table);
  return json_path;
}

}  // namespace haca
