// Command-line front end: synthetic data generation, vocabulary building,
// MLM pretraining, the three fine-tuning regimes, lambda sweeps, and the
// corpus/representation analyses, all as subcommands of one binary.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "after/analysis.hpp"
#include "after/data.hpp"
#include "after/kernels.hpp"
#include "after/model.hpp"
#include "after/rng.hpp"
#include "after/synth.hpp"
#include "after/training.hpp"
#include "after/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace after;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// .jsonl files contribute their "text" fields; anything else is read as
// plain text, one document per line. Blank lines are skipped.
Corpus load_corpus(const std::string& path) {
  Corpus corpus;
  const bool is_jsonl = fs::path(path).extension() == ".jsonl";
  std::size_t lineno = 0;
  for (auto& line : read_lines(path)) {
    ++lineno;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (is_jsonl) {
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": expected a JSON object with a text "
                                    "field");
      }
      corpus.push_back(j["text"].get<std::string>());
    } else {
      corpus.push_back(line);
    }
  }
  return corpus;
}

TextDataset corpus_to_text_dataset(const Corpus& corpus,
                                   const std::string& name) {
  TextDataset d;
  d.name = name;
  d.items.reserve(corpus.size());
  for (const auto& line : corpus) d.items.push_back({line, std::nullopt});
  return d;
}

void atomic_write(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string hash_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string now_iso() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      seeds.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad seed list entry '" + item + "'");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      grid.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad grid entry '" + item + "'");
    }
  }
  if (grid.empty()) throw std::invalid_argument("empty lambda grid");
  return grid;
}

// ------------------------------------------------------------ config files

void apply_config_file(const std::string& path, TrainConfig& tc,
                       EncoderConfig& ec) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& ex) {
    throw std::invalid_argument(path + ": " + ex.what());
  }
  if (!j.is_object()) {
    throw std::invalid_argument(path + ": config must be a JSON object");
  }
  for (auto& [key, value] : j.items()) {
    if (key == "mode") {
      tc.mode = train_mode_from_string(value.get<std::string>());
    } else if (key == "lambda") {
      tc.lambda = value.get<double>();
    } else if (key == "lr_peak") {
      tc.lr_peak = value.get<double>();
    } else if (key == "adam_beta1") {
      tc.adam_beta1 = value.get<double>();
    } else if (key == "adam_beta2") {
      tc.adam_beta2 = value.get<double>();
    } else if (key == "adam_eps") {
      tc.adam_eps = value.get<double>();
    } else if (key == "weight_decay") {
      tc.weight_decay = value.get<double>();
    } else if (key == "warmup_proportion") {
      tc.warmup_proportion = value.get<double>();
    } else if (key == "epochs") {
      tc.epochs = value.get<int>();
    } else if (key == "batch_size") {
      tc.batch_size = value.get<int>();
    } else if (key == "evals_per_epoch") {
      tc.evals_per_epoch = value.get<int>();
    } else if (key == "mlm_mask_prob") {
      tc.mlm_mask_prob = value.get<double>();
    } else if (key == "pretrain_steps") {
      tc.pretrain_steps = value.get<int>();
    } else if (key == "d_model") {
      ec.d_model = value.get<int>();
    } else if (key == "n_heads") {
      ec.n_heads = value.get<int>();
    } else if (key == "d_ff") {
      ec.d_ff = value.get<int>();
    } else if (key == "max_len") {
      ec.max_len = value.get<int>();
    } else if (key == "dropout") {
      ec.dropout_p = value.get<double>();
    } else if (key == "n_task_classes") {
      ec.n_task_classes = value.get<int>();
    } else {
      throw std::invalid_argument(path + ": unknown config key '" + key + "'");
    }
  }
}

json train_config_json(const TrainConfig& tc) {
  return json{{"mode", to_string(tc.mode)},
              {"lambda", tc.lambda},
              {"lr_peak", tc.lr_peak},
              {"adam_beta1", tc.adam_beta1},
              {"adam_beta2", tc.adam_beta2},
              {"adam_eps", tc.adam_eps},
              {"weight_decay", tc.weight_decay},
              {"warmup_proportion", tc.warmup_proportion},
              {"epochs", tc.epochs},
              {"batch_size", tc.batch_size},
              {"evals_per_epoch", tc.evals_per_epoch},
              {"mlm_mask_prob", tc.mlm_mask_prob},
              {"pretrain_steps", tc.pretrain_steps}};
}

json encoder_config_json(const EncoderConfig& ec) {
  return json{{"vocab_size", ec.vocab_size}, {"d_model", ec.d_model},
              {"n_heads", ec.n_heads},       {"d_ff", ec.d_ff},
              {"max_len", ec.max_len},       {"dropout", ec.dropout_p},
              {"n_task_classes", ec.n_task_classes}};
}

// --------------------------------------------------------------- manifests

struct ManifestWriter {
  std::string path;
  json body;

  ManifestWriter(std::string path_, const std::string& command_line,
                 json config, const std::vector<std::uint64_t>& seeds,
                 const std::vector<std::string>& input_paths)
      : path(std::move(path_)) {
    json inputs = json::object();
    for (const auto& p : input_paths) inputs[p] = hash_hex(read_file(p));
    body = json{{"command_line", command_line},
                {"config", std::move(config)},
                {"seeds", seeds},
                {"version", kVersion},
                {"inputs", std::move(inputs)},
                {"started_at", now_iso()},
                {"finished_at", nullptr}};
    atomic_write(path, json_text(body));
  }

  void finish() {
    body["finished_at"] = now_iso();
    atomic_write(path, json_text(body));
  }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// ------------------------------------------------------------- run results

json eval_record_json(const EvalRecord& r) {
  return json{{"step", r.step},
              {"train_main_loss", r.train_main_loss},
              {"train_domain_loss", r.train_domain_loss},
              {"val_loss", r.val_loss},
              {"val_accuracy", r.val_accuracy},
              {"val_f1", r.val_f1},
              {"val_mcc", r.val_mcc}};
}

json run_result_json(const RunResult& r) {
  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back(eval_record_json(e));
  return json{{"seed", r.seed},
              {"lambda", r.lambda},
              {"mode", to_string(r.mode)},
              {"selected_step", r.selected_step},
              {"best_val_loss", r.best_val_loss},
              {"best_val_accuracy", r.best_val_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"test_f1", r.test_f1},
              {"test_mcc", r.test_mcc},
              {"evals", std::move(evals)}};
}

json stats_json(const MetricStats& s) {
  return json{{"mean", s.mean}, {"std", s.stdev}};
}

std::string run_log_text(const RunResult& r) {
  std::string out;
  for (const auto& e : r.evals) out += eval_record_json(e).dump() + "\n";
  return out;
}

// ------------------------------------------------------------ data loading

struct LoadedMain {
  Dataset train, val, test;
};

LoadedMain load_main_dir(const std::string& dir, const Vocab& vocab,
                         int max_len) {
  LoadedMain out;
  const fs::path base(dir);
  out.train = encode_dataset(
      load_jsonl((base / "main_train.jsonl").string(), DatasetKind::kMain),
      vocab, max_len);
  out.val = encode_dataset(
      load_jsonl((base / "main_val.jsonl").string(), DatasetKind::kMain),
      vocab, max_len);
  out.test = encode_dataset(
      load_jsonl((base / "main_test.jsonl").string(), DatasetKind::kMain),
      vocab, max_len);
  return out;
}

Checkpoint load_checkpoint_with_vocab(const std::string& ckpt_path,
                                      const std::string& vocab_path,
                                      Vocab& vocab_out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  vocab_out = Vocab::load(vocab_path);
  if (vocab_out.fingerprint() != ckpt.vocab_fingerprint) {
    throw std::invalid_argument(vocab_path +
                                ": vocabulary does not match the checkpoint");
  }
  return ckpt;
}

// ------------------------------------------------------------- subcommands

int cmd_gen_synth(const std::string& out_dir, std::uint64_t seed,
                  const SynthSpec& spec, bool force) {
  spec.validate();
  fs::create_directories(out_dir);
  if (!fs::is_empty(out_dir) && !force) {
    throw std::invalid_argument(out_dir +
                                " is not empty (pass --force to overwrite)");
  }
  Rng rng(seed);
  const SynthOutput out = gen_synthetic(spec, rng);

  auto jsonl_text = [](const TextDataset& d) {
    std::string s;
    for (const auto& item : d.items) {
      json j;
      j["text"] = item.text;
      if (item.label) j["label"] = *item.label;
      s += j.dump() + "\n";
    }
    return s;
  };
  std::string pretrain_text;
  for (const auto& line : out.pretrain) pretrain_text += line + "\n";

  const fs::path base(out_dir);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"main_train.jsonl", jsonl_text(out.main_train)},
      {"main_val.jsonl", jsonl_text(out.main_val)},
      {"main_test.jsonl", jsonl_text(out.main_test)},
      {"aux.jsonl", jsonl_text(out.aux)},
      {"pretrain.txt", pretrain_text},
  };
  json file_hashes = json::object();
  for (const auto& [name, content] : files) {
    atomic_write((base / name).string(), content);
    file_hashes[name] = hash_hex(content);
  }
  const json manifest{{"seed", seed},
                      {"version", kVersion},
                      {"spec",
                       {{"sentence_len", spec.sentence_len},
                        {"cue_frac", spec.cue_frac},
                        {"shortcut_rho", spec.shortcut_rho},
                        {"main_train", spec.main_train},
                        {"main_val", spec.main_val},
                        {"main_test", spec.main_test},
                        {"aux_size", spec.aux_size},
                        {"pretrain_size", spec.pretrain_size}}},
                      {"files", std::move(file_hashes)}};
  atomic_write((base / "manifest.json").string(), json_text(manifest));
  std::cout << "wrote " << files.size() + 1 << " files to " << out_dir << "\n";
  return 0;
}

int cmd_build_vocab(const std::vector<std::string>& corpus_paths,
                    std::size_t size, const std::string& out_path) {
  std::vector<std::string> lines;
  for (const auto& p : corpus_paths) {
    Corpus c = load_corpus(p);
    lines.insert(lines.end(), c.begin(), c.end());
  }
  const Vocab vocab = Vocab::build(lines, size);
  const fs::path target(out_path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = out_path + ".tmp";
  vocab.save(tmp);
  fs::rename(tmp, out_path);
  std::cout << "vocab of " << vocab.size() << " tokens written to " << out_path
            << "\n";
  return 0;
}

int cmd_pretrain(const std::string& corpus_path, const std::string& vocab_path,
                 const std::string& out_path, const TrainConfig& tc,
                 EncoderConfig ec, std::uint64_t seed,
                 const std::string& command_line,
                 const std::vector<std::string>& inputs) {
  const Vocab vocab = Vocab::load(vocab_path);
  ec.vocab_size = vocab.size();
  ec.seed = seed;
  ec.validate();
  tc.validate();
  const Corpus corpus = load_corpus(corpus_path);
  const Dataset dataset = encode_dataset(
      corpus_to_text_dataset(corpus, "pretrain"), vocab, ec.max_len);

  json config = train_config_json(tc);
  config["encoder"] = encoder_config_json(ec);
  ManifestWriter manifest(out_path + ".manifest.json", command_line,
                          std::move(config), {seed}, inputs);

  EncoderModel model = init_model(ec);
  const std::vector<double> losses =
      pretrain_mlm(model, vocab, dataset, tc, Rng(seed));
  save_checkpoint(model, vocab.fingerprint(), out_path);

  std::string log;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    log += json{{"step", i + 1}, {"loss", losses[i]}}.dump() + "\n";
  }
  atomic_write(out_path + ".log.jsonl", log);
  manifest.finish();
  std::cout << "pretrained " << losses.size() << " steps, loss "
            << losses.front() << " -> " << losses.back() << ", checkpoint "
            << out_path << "\n";
  return 0;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& main_dir,
                 const std::string& aux_path, const std::string& vocab_path,
                 const std::string& out_dir, const TrainConfig& tc,
                 const std::vector<std::uint64_t>& seeds,
                 const std::string& command_line,
                 std::vector<std::string> inputs) {
  tc.validate();
  const bool needs_aux = tc.mode != TrainMode::kSft;
  if (needs_aux && aux_path.empty()) {
    throw std::invalid_argument(to_string(tc.mode) +
                                " mode requires --aux");
  }
  if (!needs_aux && !aux_path.empty()) {
    throw std::invalid_argument("sft mode forbids --aux");
  }
  if (needs_aux && !(tc.lambda > 0.0)) {
    throw std::invalid_argument("lambda must be positive");
  }

  Vocab vocab = Vocab::load(vocab_path);
  const Checkpoint ckpt = load_checkpoint_with_vocab(ckpt_path, vocab_path,
                                                     vocab);
  const LoadedMain main = load_main_dir(main_dir, vocab, ckpt.config.max_len);
  Dataset aux;
  if (needs_aux) {
    aux = encode_dataset(load_jsonl(aux_path, DatasetKind::kAuxiliary), vocab,
                         ckpt.config.max_len);
  }

  const fs::path base(out_dir);
  fs::create_directories(base);
  json config = train_config_json(tc);
  config["encoder"] = encoder_config_json(ckpt.config);
  config["checkpoint"] = ckpt_path;
  config["main_dir"] = main_dir;
  if (!aux_path.empty()) config["aux"] = aux_path;
  inputs.push_back((fs::path(main_dir) / "main_train.jsonl").string());
  inputs.push_back((fs::path(main_dir) / "main_val.jsonl").string());
  inputs.push_back((fs::path(main_dir) / "main_test.jsonl").string());
  ManifestWriter manifest((base / "run_manifest.json").string(), command_line,
                          std::move(config), seeds, inputs);

  const MainSplits splits{&main.train, &main.val, &main.test};
  std::vector<double> test_acc, test_f1, test_mcc, val_acc;
  for (const std::uint64_t seed : seeds) {
    EncoderModel trained = ckpt.model.clone();
    const RunResult r = finetune(ckpt, splits, needs_aux ? &aux : nullptr, tc,
                                 seed, {}, &trained);
    const std::string tag = "seed" + std::to_string(seed);
    atomic_write((base / ("run_" + tag + ".json")).string(),
                 json_text(run_result_json(r)));
    atomic_write((base / ("train_log_" + tag + ".jsonl")).string(),
                 run_log_text(r));
    save_checkpoint(trained, vocab.fingerprint(),
                    (base / ("model_" + tag + ".ckpt")).string());
    test_acc.push_back(r.test_accuracy);
    test_f1.push_back(r.test_f1);
    test_mcc.push_back(r.test_mcc);
    val_acc.push_back(r.best_val_accuracy);
    std::cout << "seed " << seed << ": val_acc " << r.best_val_accuracy
              << ", test_acc " << r.test_accuracy << "\n";
  }
  const json agg{{"mode", to_string(tc.mode)},
                 {"lambda", tc.mode == TrainMode::kSft ? 0.0 : tc.lambda},
                 {"n_runs", seeds.size()},
                 {"val_accuracy", stats_json(aggregate(val_acc))},
                 {"test_accuracy", stats_json(aggregate(test_acc))},
                 {"test_f1", stats_json(aggregate(test_f1))},
                 {"test_mcc", stats_json(aggregate(test_mcc))}};
  atomic_write((base / "aggregate.json").string(), json_text(agg));
  manifest.finish();
  const MetricStats acc = aggregate(test_acc);
  std::cout << "test accuracy " << acc.mean << " +/- " << acc.stdev << " over "
            << seeds.size() << " seeds\n";
  return 0;
}

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lambda);
  return buf;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& main_dir,
              const std::string& aux_path, const std::string& vocab_path,
              const std::string& out_dir, const TrainConfig& tc,
              const std::vector<double>& grid,
              const std::vector<std::uint64_t>& seeds, int jobs,
              const std::string& command_line,
              std::vector<std::string> inputs) {
  tc.validate();
  Vocab vocab = Vocab::load(vocab_path);
  const Checkpoint ckpt = load_checkpoint_with_vocab(ckpt_path, vocab_path,
                                                     vocab);
  const LoadedMain main = load_main_dir(main_dir, vocab, ckpt.config.max_len);
  const Dataset aux = encode_dataset(
      load_jsonl(aux_path, DatasetKind::kAuxiliary), vocab,
      ckpt.config.max_len);

  const fs::path base(out_dir);
  fs::create_directories(base);
  json config = train_config_json(tc);
  config["encoder"] = encoder_config_json(ckpt.config);
  config["checkpoint"] = ckpt_path;
  config["grid"] = grid;
  config["jobs"] = jobs;
  inputs.push_back((fs::path(main_dir) / "main_train.jsonl").string());
  inputs.push_back((fs::path(main_dir) / "main_val.jsonl").string());
  inputs.push_back((fs::path(main_dir) / "main_test.jsonl").string());
  ManifestWriter manifest((base / "run_manifest.json").string(), command_line,
                          std::move(config), seeds, inputs);

  const MainSplits splits{&main.train, &main.val, &main.test};
  const SweepResult sweep =
      lambda_sweep(ckpt, splits, aux, tc, grid, seeds, jobs);

  json cells = json::array();
  for (const auto& cell : sweep.cells) {
    for (const auto& run : cell.runs) {
      const std::string name = "lambda" + lambda_tag(cell.lambda) + "_seed" +
                               std::to_string(run.seed) + ".json";
      atomic_write((base / "runs" / name).string(),
                   json_text(run_result_json(run)));
    }
    json c{{"lambda", cell.lambda},
           {"n_runs", cell.runs.size()},
           {"failures", cell.failures}};
    if (!cell.runs.empty()) {
      c["val_accuracy"] = stats_json(cell.val_accuracy);
      c["test_accuracy"] = stats_json(cell.test_accuracy);
      c["test_f1"] = stats_json(cell.test_f1);
      c["test_mcc"] = stats_json(cell.test_mcc);
    }
    cells.push_back(std::move(c));
  }
  json sweep_json{{"mode", to_string(tc.mode)},
                  {"grid", grid},
                  {"seeds", seeds},
                  {"cells", std::move(cells)}};
  if (sweep.has_best) sweep_json["best_lambda"] = sweep.best_lambda;
  atomic_write((base / "sweep.json").string(), json_text(sweep_json));
  const std::string table = sweep_table(sweep);
  atomic_write((base / "sweep_table.txt").string(), table);
  manifest.finish();
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------- analysis

std::string matrix_csv(const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& matrix) {
  std::string csv;
  for (const auto& n : names) csv += "," + n;
  csv += "\n";
  char buf[40];
  for (std::size_t i = 0; i < names.size(); ++i) {
    csv += names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", matrix[i][j]);
      csv += ",";
      csv += buf;
    }
    csv += "\n";
  }
  return csv;
}

void write_matrix(const std::string& prefix,
                  const std::vector<std::string>& names,
                  const std::vector<std::vector<double>>& matrix) {
  atomic_write(prefix + ".csv", matrix_csv(names, matrix));
  atomic_write(prefix + ".json",
               json_text(json{{"names", names}, {"matrix", matrix}}));
}

std::vector<std::string> corpus_names(const std::vector<std::string>& paths) {
  std::vector<std::string> names;
  names.reserve(paths.size());
  for (const auto& p : paths) names.push_back(fs::path(p).stem().string());
  return names;
}

int cmd_analyze_jsd(const std::vector<std::string>& paths,
                    const std::string& prefix, std::size_t top_k) {
  std::vector<Corpus> corpora;
  corpora.reserve(paths.size());
  for (const auto& p : paths) corpora.push_back(load_corpus(p));
  const auto dists = term_distribution(corpora, top_k);
  const std::size_t n = dists.size();
  std::vector<std::vector<double>> matrix(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      matrix[i][j] = matrix[j][i] = js_divergence(dists[i], dists[j]);
    }
  }
  const auto names = corpus_names(paths);
  write_matrix(prefix, names, matrix);
  std::cout << matrix_csv(names, matrix);
  return 0;
}

int cmd_analyze_overlap(const std::vector<std::string>& paths,
                        const std::string& prefix, std::size_t top_k) {
  std::vector<Corpus> corpora;
  corpora.reserve(paths.size());
  for (const auto& p : paths) corpora.push_back(load_corpus(p));
  const std::size_t n = corpora.size();
  std::vector<std::vector<double>> matrix(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      matrix[i][j] = vocab_overlap(corpora[i], corpora[j], top_k);
    }
  }
  const auto names = corpus_names(paths);
  write_matrix(prefix, names, matrix);
  std::cout << matrix_csv(names, matrix);
  return 0;
}

int cmd_analyze_mlm(const std::string& ckpt_path,
                    const std::string& vocab_path, const std::string& data,
                    const std::string& out_path, int passes,
                    std::uint64_t seed) {
  Vocab vocab = Vocab::load(vocab_path);
  const Checkpoint ckpt = load_checkpoint_with_vocab(ckpt_path, vocab_path,
                                                     vocab);
  const Dataset dataset =
      encode_dataset(corpus_to_text_dataset(load_corpus(data), "probe"),
                     vocab, ckpt.config.max_len);
  const double loss = mlm_probe(ckpt.model, vocab, dataset, Rng(seed), passes);
  const json report{{"checkpoint", ckpt_path}, {"dataset", data},
                    {"passes", passes},        {"seed", seed},
                    {"mlm_loss", loss}};
  if (!out_path.empty()) atomic_write(out_path, json_text(report));
  std::cout << "mlm loss " << loss << " on " << data << "\n";
  return 0;
}

int cmd_analyze_probe(const std::string& ckpt_path,
                      const std::string& vocab_path,
                      const std::string& main_path,
                      const std::string& aux_path,
                      const std::string& out_path, std::uint64_t seed) {
  Vocab vocab = Vocab::load(vocab_path);
  const Checkpoint ckpt = load_checkpoint_with_vocab(ckpt_path, vocab_path,
                                                     vocab);
  const Dataset main = encode_dataset(
      corpus_to_text_dataset(load_corpus(main_path), "main"), vocab,
      ckpt.config.max_len);
  const Dataset aux = encode_dataset(
      corpus_to_text_dataset(load_corpus(aux_path), "aux"), vocab,
      ckpt.config.max_len);
  const double acc = domain_probe(ckpt.model, main, aux, Rng(seed));
  const json report{{"checkpoint", ckpt_path},
                    {"main", main_path},
                    {"aux", aux_path},
                    {"seed", seed},
                    {"probe_accuracy", acc}};
  if (!out_path.empty()) atomic_write(out_path, json_text(report));
  std::cout << "domain probe accuracy " << acc << "\n";
  return 0;
}

int resolve_jobs(int jobs_flag) {
  if (jobs_flag > 0) return jobs_flag;
  if (const char* env = std::getenv("AFTER_JOBS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("bad AFTER_JOBS value '" +
                                  std::string(env) + "'");
    }
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domain-adversarial fine-tuning toolkit"};
  app.require_subcommand(1);
  app.fallthrough(true);
  app.set_version_flag("--version", kVersion);
  const std::string command_line = join_args(argc, argv);

  int threads = 1;
  app.add_option("--threads", threads, "kernel threads (OpenMP when > 1)")
      ->capture_default_str();

  std::function<int()> action;

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth",
                                 "generate the synthetic two-domain benchmark");
  {
    static std::string out_dir;
    static std::uint64_t seed = 0;
    static SynthSpec spec;
    static bool force = false;
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "rng seed")->capture_default_str();
    gen->add_option("--rho", spec.shortcut_rho,
                    "shortcut co-occurrence rate in class-A train sentences")
        ->capture_default_str();
    gen->add_option("--len", spec.sentence_len, "words per sentence")
        ->capture_default_str();
    gen->add_option("--cue-frac", spec.cue_frac, "fraction of cue words")
        ->capture_default_str();
    gen->add_option("--train", spec.main_train, "main train size")
        ->capture_default_str();
    gen->add_option("--val", spec.main_val, "main validation size")
        ->capture_default_str();
    gen->add_option("--test", spec.main_test, "main test size")
        ->capture_default_str();
    gen->add_option("--aux", spec.aux_size, "auxiliary size")
        ->capture_default_str();
    gen->add_option("--pretrain-size", spec.pretrain_size,
                    "pretraining corpus size")
        ->capture_default_str();
    gen->add_flag("--force", force, "allow writing into a non-empty directory");
    gen->callback(
        [&] { action = [&] { return cmd_gen_synth(out_dir, seed, spec, force); }; });
  }

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab",
                                "build a word vocabulary from corpora");
  {
    static std::vector<std::string> corpora;
    static std::size_t size = 10000;
    static std::string out_path;
    bv->add_option("--corpus", corpora, "corpus files (.txt or .jsonl)")
        ->required()
        ->check(CLI::ExistingFile);
    bv->add_option("--size", size, "max vocabulary size incl. specials")
        ->capture_default_str();
    bv->add_option("--out", out_path, "output vocab file")->required();
    bv->callback(
        [&] { action = [&] { return cmd_build_vocab(corpora, size, out_path); }; });
  }

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "masked-language-model pretraining");
  {
    static std::string corpus, vocab_path, out_path, config_path;
    static std::uint64_t seed = 0;
    static int steps = -1, batch_size = -1;
    static double lr = -1.0, mask_prob = -1.0, warmup = -1.0;
    pt->add_option("--corpus", corpus, "pretraining corpus")
        ->required()
        ->check(CLI::ExistingFile);
    pt->add_option("--vocab", vocab_path, "vocabulary file")
        ->required()
        ->check(CLI::ExistingFile);
    pt->add_option("--out", out_path, "checkpoint path")->required();
    pt->add_option("--config", config_path, "JSON config file")
        ->check(CLI::ExistingFile);
    pt->add_option("--seed", seed, "rng seed")->capture_default_str();
    pt->add_option("--steps", steps, "training steps");
    pt->add_option("--batch-size", batch_size, "batch size");
    pt->add_option("--lr", lr, "peak learning rate");
    pt->add_option("--mask-prob", mask_prob, "mlm masking probability");
    pt->add_option("--warmup", warmup, "warmup proportion");
    pt->callback([&, ptcmd = pt] {
      action = [&, ptcmd] {
        TrainConfig tc;
        EncoderConfig ec;
        std::vector<std::string> inputs = {corpus, vocab_path};
        if (!config_path.empty()) {
          apply_config_file(config_path, tc, ec);
          inputs.push_back(config_path);
        }
        if (ptcmd->count("--steps")) tc.pretrain_steps = steps;
        if (ptcmd->count("--batch-size")) tc.batch_size = batch_size;
        if (ptcmd->count("--lr")) tc.lr_peak = lr;
        if (ptcmd->count("--mask-prob")) tc.mlm_mask_prob = mask_prob;
        if (ptcmd->count("--warmup")) tc.warmup_proportion = warmup;
        return cmd_pretrain(corpus, vocab_path, out_path, tc, ec, seed,
                            command_line, inputs);
      };
    });
  }

  // shared fine-tuning option block
  struct FinetuneArgs {
    std::string ckpt, main_dir, aux, vocab_path, out_dir, config_path;
    std::string mode = "sft";
    double lambda = -1.0;
    std::string seeds = "1,2,3,4,5";
    int epochs = -1, batch_size = -1, evals = -1;
    double lr = -1.0, warmup = -1.0, weight_decay = -1.0;
  };
  auto add_finetune_options = [](CLI::App* cmd, FinetuneArgs& a,
                                 bool is_sweep) {
    cmd->add_option("--ckpt", a.ckpt, "pretrained checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--main", a.main_dir,
                    "directory with main_{train,val,test}.jsonl")
        ->required()
        ->check(CLI::ExistingDirectory);
    auto* aux_opt = cmd->add_option("--aux", a.aux, "auxiliary jsonl file")
                        ->check(CLI::ExistingFile);
    if (is_sweep) aux_opt->required();
    cmd->add_option("--vocab", a.vocab_path, "vocabulary file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out_dir, "output directory")->required();
    cmd->add_option("--config", a.config_path, "JSON config file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seeds", a.seeds, "comma-separated seed list")
        ->capture_default_str();
    cmd->add_option("--lambda", a.lambda, "domain loss coefficient");
    cmd->add_option("--epochs", a.epochs, "training epochs");
    cmd->add_option("--batch-size", a.batch_size, "batch size");
    cmd->add_option("--evals-per-epoch", a.evals, "validation points per epoch");
    cmd->add_option("--lr", a.lr, "peak learning rate");
    cmd->add_option("--warmup", a.warmup, "warmup proportion");
    cmd->add_option("--weight-decay", a.weight_decay, "decoupled weight decay");
  };
  auto merged_config = [](const CLI::App* cmd, const FinetuneArgs& a,
                          std::vector<std::string>& inputs) {
    TrainConfig tc;
    EncoderConfig ec_ignored;
    if (!a.config_path.empty()) {
      apply_config_file(a.config_path, tc, ec_ignored);
      inputs.push_back(a.config_path);
    }
    if (cmd->count("--lambda")) tc.lambda = a.lambda;
    if (cmd->count("--epochs")) tc.epochs = a.epochs;
    if (cmd->count("--batch-size")) tc.batch_size = a.batch_size;
    if (cmd->count("--evals-per-epoch")) tc.evals_per_epoch = a.evals;
    if (cmd->count("--lr")) tc.lr_peak = a.lr;
    if (cmd->count("--warmup")) tc.warmup_proportion = a.warmup;
    if (cmd->count("--weight-decay")) tc.weight_decay = a.weight_decay;
    return tc;
  };

  // finetune
  auto* ft = app.add_subcommand("finetune",
                                "fine-tune a checkpoint (sft|after|multitask)");
  {
    static FinetuneArgs a;
    add_finetune_options(ft, a, /*is_sweep=*/false);
    ft->add_option("--mode", a.mode, "sft|after|multitask")
        ->capture_default_str();
    ft->callback([&, ftcmd = ft] {
      action = [&, ftcmd] {
        std::vector<std::string> inputs = {a.ckpt, a.vocab_path};
        TrainConfig tc = merged_config(ftcmd, a, inputs);
        tc.mode = train_mode_from_string(a.mode);
        if (tc.mode == TrainMode::kSft && ftcmd->count("--lambda")) {
          std::cerr << "warning: --lambda is ignored in sft mode\n";
        }
        if (!a.aux.empty()) inputs.push_back(a.aux);
        return cmd_finetune(a.ckpt, a.main_dir, a.aux, a.vocab_path, a.out_dir,
                            tc, parse_seeds(a.seeds), command_line, inputs);
      };
    });
  }

  // sweep
  auto* sw = app.add_subcommand("sweep", "lambda grid sweep");
  {
    static FinetuneArgs a;
    static std::string grid = "0.1,0.01,0.001,0.0001";
    static std::string mode = "after";
    static int jobs = 0;
    add_finetune_options(sw, a, /*is_sweep=*/true);
    sw->add_option("--grid", grid, "comma-separated lambda grid")
        ->capture_default_str();
    sw->add_option("--mode", mode, "after|multitask")->capture_default_str();
    sw->add_option("--jobs", jobs,
                   "parallel cells (0: AFTER_JOBS env, then core count)")
        ->capture_default_str();
    sw->callback([&, swcmd = sw] {
      action = [&, swcmd] {
        std::vector<std::string> inputs = {a.ckpt, a.vocab_path, a.aux};
        TrainConfig tc = merged_config(swcmd, a, inputs);
        tc.mode = train_mode_from_string(mode);
        return cmd_sweep(a.ckpt, a.main_dir, a.aux, a.vocab_path, a.out_dir,
                         tc, parse_grid(grid), parse_seeds(a.seeds),
                         resolve_jobs(jobs), command_line, inputs);
      };
    });
  }

  // analyze
  auto* an = app.add_subcommand("analyze", "corpus and representation reports");
  an->require_subcommand(1);
  {
    auto* jsd = an->add_subcommand("jsd",
                                   "pairwise Jensen-Shannon divergence matrix");
    static std::vector<std::string> jsd_files;
    static std::string jsd_prefix;
    static std::size_t jsd_topk = 5000;
    jsd->add_option("files", jsd_files, "corpus files")
        ->required()
        ->check(CLI::ExistingFile);
    jsd->add_option("--out", jsd_prefix, "output prefix (.csv/.json)")
        ->required();
    jsd->add_option("--top-k", jsd_topk, "per-corpus vocabulary size")
        ->capture_default_str();
    jsd->callback([&] {
      action = [&] { return cmd_analyze_jsd(jsd_files, jsd_prefix, jsd_topk); };
    });

    auto* ov = an->add_subcommand("overlap",
                                  "directional vocabulary overlap matrix");
    static std::vector<std::string> ov_files;
    static std::string ov_prefix;
    static std::size_t ov_topk = 10000;
    ov->add_option("files", ov_files, "corpus files")
        ->required()
        ->check(CLI::ExistingFile);
    ov->add_option("--out", ov_prefix, "output prefix (.csv/.json)")
        ->required();
    ov->add_option("--top-k", ov_topk, "per-corpus vocabulary size")
        ->capture_default_str();
    ov->callback([&] {
      action = [&] { return cmd_analyze_overlap(ov_files, ov_prefix, ov_topk); };
    });

    auto* mlm = an->add_subcommand("mlm", "average masked-LM loss probe");
    static std::string mlm_ckpt, mlm_vocab, mlm_data, mlm_out;
    static int mlm_passes = 5;
    static std::uint64_t mlm_seed = 0;
    mlm->add_option("--ckpt", mlm_ckpt, "checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    mlm->add_option("--vocab", mlm_vocab, "vocabulary file")
        ->required()
        ->check(CLI::ExistingFile);
    mlm->add_option("--data", mlm_data, "dataset (.txt or .jsonl)")
        ->required()
        ->check(CLI::ExistingFile);
    mlm->add_option("--out", mlm_out, "output JSON path");
    mlm->add_option("--passes", mlm_passes, "mask redraws to average")
        ->capture_default_str();
    mlm->add_option("--seed", mlm_seed, "rng seed")->capture_default_str();
    mlm->callback([&] {
      action = [&] {
        return cmd_analyze_mlm(mlm_ckpt, mlm_vocab, mlm_data, mlm_out,
                               mlm_passes, mlm_seed);
      };
    });

    auto* pr = an->add_subcommand(
        "probe", "linear domain-separability probe on [CLS] features");
    static std::string pr_ckpt, pr_vocab, pr_main, pr_aux, pr_out;
    static std::uint64_t pr_seed = 0;
    pr->add_option("--ckpt", pr_ckpt, "checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--vocab", pr_vocab, "vocabulary file")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--main", pr_main, "main dataset (.txt or .jsonl)")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--aux", pr_aux, "auxiliary dataset (.txt or .jsonl)")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--out", pr_out, "output JSON path");
    pr->add_option("--seed", pr_seed, "rng seed")->capture_default_str();
    pr->callback([&] {
      action = [&] {
        return cmd_analyze_probe(pr_ckpt, pr_vocab, pr_main, pr_aux, pr_out,
                                 pr_seed);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  kernels::set_threads(threads);
  try {
    return action();
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
