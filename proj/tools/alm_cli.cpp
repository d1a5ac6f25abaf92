// alm: train authorial language models, attribute texts, and evaluate.
#include <chrono>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alm/dataset.hpp"
#include "alm/error.hpp"
#include "alm/eval.hpp"
#include "alm/model_io.hpp"
#include "alm/scoring.hpp"
#include "alm/training.hpp"
#include "alm/version.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::ordered_json;

struct Common {
  int jobs = 1;
};

struct ConfigFlags {
  std::string config_file;
  std::optional<std::uint32_t> vocab_size, context_len, d_model, n_layers, n_heads, d_ff;
  std::optional<std::uint32_t> pretrain_epochs, finetune_epochs, batch_size, stride;
  std::optional<double> lr_pretrain, lr_finetune;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_file, "JSON file of config fields; flags override it")
        ->check(CLI::ExistingFile);
    app.add_option("--vocab-size", vocab_size, "BPE vocabulary size");
    app.add_option("--context-len", context_len, "Model context length in tokens");
    app.add_option("--d-model", d_model, "Embedding width");
    app.add_option("--n-layers", n_layers, "Transformer blocks");
    app.add_option("--n-heads", n_heads, "Attention heads");
    app.add_option("--d-ff", d_ff, "MLP hidden width");
    app.add_option("--pretrain-epochs", pretrain_epochs, "Epochs over the pooled corpus");
    app.add_option("--epochs,--finetune-epochs", finetune_epochs, "Fine-tuning epochs per author");
    app.add_option("--batch-size", batch_size, "Windows per optimizer step");
    app.add_option("--lr-pretrain", lr_pretrain, "Adam learning rate for pretraining");
    app.add_option("--lr-finetune", lr_finetune, "Adam learning rate for fine-tuning");
    app.add_option("--stride", stride, "Packing stride in tokens (0: context length)");
    app.add_option("--seed", seed, "Seed for every random choice");
  }

  alm::TrainingConfig resolve() const {
    alm::TrainingConfig c;
    if (!config_file.empty()) c = alm::merge_training_config(c, alm::read_binary_file(config_file));
    auto set = [](auto& field, const auto& flag) {
      if (flag) field = *flag;
    };
    set(c.vocab_size, vocab_size);
    set(c.context_len, context_len);
    set(c.d_model, d_model);
    set(c.n_layers, n_layers);
    set(c.n_heads, n_heads);
    set(c.d_ff, d_ff);
    set(c.pretrain_epochs, pretrain_epochs);
    set(c.finetune_epochs, finetune_epochs);
    set(c.batch_size, batch_size);
    set(c.stride, stride);
    set(c.lr_pretrain, lr_pretrain);
    set(c.lr_finetune, lr_finetune);
    set(c.seed, seed);
    c.validate();
    return c;
  }
};

std::string read_all(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw alm::Error("cannot write " + path);
  out << text;
  if (!out) throw alm::Error("write failed: " + path);
}

// Provenance record for a mutating command, written next to its output.
struct RunManifest {
  std::string command;
  ordered_json config = ordered_json::object();
  std::string dataset_fingerprint;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> artifacts;
  Clock::time_point start = Clock::now();

  void write(const std::string& primary_output) const {
    ordered_json j;
    j["command"] = command;
    j["version"] = alm::kVersion;
    j["config"] = config;
    j["dataset_fingerprint"] = dataset_fingerprint;
    if (seed) j["seed"] = *seed;
    j["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
    j["artifacts"] = artifacts;
    write_file(primary_output + ".run.json", j.dump(2) + "\n");
  }
};

std::string strip_slash(std::string p) {
  while (p.size() > 1 && p.back() == '/') p.pop_back();
  return p;
}

alm::Dataset load_dataset_warn(const std::string& path) { return alm::load_dataset(path, &std::cerr); }

int run_train(const Common& common, const ConfigFlags& flags, const std::string& dataset_path,
              const std::string& out_dir, const std::string& vocab_path, bool quiet) {
  RunManifest run;
  run.command = "train";
  const alm::TrainingConfig config = flags.resolve();
  const alm::Dataset dataset = load_dataset_warn(dataset_path);
  std::optional<alm::Vocab> vocab;
  if (!vocab_path.empty()) vocab = alm::Vocab::load(vocab_path);
  alm::TrainingHooks hooks;
  hooks.log = quiet ? nullptr : &std::cerr;
  hooks.jobs = common.jobs;
  const alm::AlmSet alms = alm::build_alm_set(dataset, config, hooks, std::move(vocab));
  alm::save_alm_set(alms, out_dir);

  run.config = ordered_json::parse(alm::training_config_to_json(config));
  run.dataset_fingerprint = dataset.fingerprint();
  run.seed = config.seed;
  run.artifacts = {out_dir + "/manifest.json", out_dir + "/vocab.almvocab", out_dir + "/base.almm"};
  const auto manifest = nlohmann::json::parse(alm::read_binary_file(out_dir + "/manifest.json"));
  for (const auto& a : manifest.at("authors")) run.artifacts.push_back(out_dir + "/" + a.at("file").get<std::string>());
  run.write(strip_slash(out_dir));
  return 0;
}

int run_attribute(const Common& common, const std::string& models, const std::vector<std::string>& texts,
                  bool use_stdin) {
  if (texts.empty() && !use_stdin) throw CLI::ValidationError("attribute", "give --text PATH or --stdin");
  const alm::AlmSet alms = alm::load_alm_set(models);
  std::vector<alm::Query> queries;
  for (const std::string& path : texts) queries.push_back({path, alm::read_binary_file(path)});
  if (use_stdin) queries.push_back({"stdin", read_all(std::cin)});
  const auto items = alm::attribute_batch(alms, queries, common.jobs);
  int status = 0;
  for (const alm::BatchItem& item : items) {
    if (item.result) {
      std::cout << alm::to_jsonl(item) << '\n';
    } else {
      std::cerr << "error: " << item.query_id << ": " << item.error << '\n';
      status = 1;
    }
  }
  return status;
}

int run_eval(const Common& common, const std::string& models, const std::string& dataset_path,
             const std::string& report_path, std::string confusion_path, const std::string& predictions_path) {
  RunManifest run;
  run.command = "eval";
  const alm::AlmSet alms = alm::load_alm_set(models);
  const alm::Dataset dataset = load_dataset_warn(dataset_path);
  const auto test = alm::test_set(dataset);
  const alm::EvaluationReport report = alm::evaluate(alms, test, common.jobs);

  std::ostringstream csv;
  alm::write_report_csv(report, csv);
  write_file(report_path, csv.str());
  if (confusion_path.empty()) {
    const std::filesystem::path p(report_path);
    confusion_path = (p.parent_path() / (p.stem().string() + ".confusion.csv")).string();
  }
  std::ostringstream conf;
  alm::write_confusion_csv(report, conf);
  write_file(confusion_path, conf.str());
  run.artifacts = {report_path, confusion_path};
  if (!predictions_path.empty()) {
    std::string lines;
    for (const auto& item : report.predictions) lines += alm::to_jsonl(item) + "\n";
    write_file(predictions_path, lines);
    run.artifacts.push_back(predictions_path);
  }
  if (report.total_skipped() > 0) {
    std::cerr << "warning: " << report.total_skipped() << " test texts were too short to score\n";
  }
  std::cout << "macro_avg_accuracy," << report.macro_avg_accuracy << '\n';

  run.config = ordered_json::parse(alm::training_config_to_json(alms.config));
  run.dataset_fingerprint = dataset.fingerprint();
  run.seed = alms.config.seed;
  run.write(report_path);
  return 0;
}

int run_ablate(const Common& common, const std::string& models, const std::string& dataset_path,
               const std::string& grid_text, const std::string& out_path) {
  RunManifest run;
  run.command = "ablate";
  const auto grid = alm::parse_grid(grid_text);
  const alm::AlmSet alms = alm::load_alm_set(models);
  const alm::Dataset dataset = load_dataset_warn(dataset_path);
  const auto test = alm::test_set(dataset);
  const alm::AblationCurve curve = alm::ablate(alms, test, grid, common.jobs);
  std::ostringstream csv;
  alm::write_ablation_csv(curve, csv);
  if (out_path.empty()) {
    std::cout << csv.str();
    return 0;
  }
  write_file(out_path, csv.str());
  run.config = ordered_json::parse(alm::training_config_to_json(alms.config));
  run.config["grid"] = grid;
  run.dataset_fingerprint = dataset.fingerprint();
  run.seed = alms.config.seed;
  run.artifacts = {out_path};
  run.write(out_path);
  return 0;
}

int run_stats(const std::string& dataset_path, const std::string& vocab_path, const std::string& models,
              std::uint32_t vocab_size) {
  const alm::Dataset dataset = load_dataset_warn(dataset_path);
  alm::Vocab vocab;
  if (!vocab_path.empty()) {
    vocab = alm::Vocab::load(vocab_path);
  } else if (!models.empty()) {
    vocab = alm::load_alm_set(models).vocab;
  } else {
    std::vector<std::string> train;
    for (const alm::Record* r : dataset.records_of(alm::Split::kTrain)) train.push_back(r->text);
    if (train.empty()) throw alm::Error("dataset has no training texts to fit a vocab on; pass --vocab");
    vocab = alm::train_bpe(train, vocab_size);
  }
  alm::write_stats_csv(alm::dataset_stats(dataset, vocab), std::cout);
  return 0;
}

int run_synth(std::size_t authors, std::size_t per_author, std::uint64_t seed, const std::string& out) {
  RunManifest run;
  run.command = "synth";
  const alm::Dataset ds = alm::synth_corpus(authors, per_author, seed);
  alm::save_dataset(ds, out);
  run.config = {{"authors", authors}, {"texts_per_author", per_author}};
  run.dataset_fingerprint = ds.fingerprint();
  run.seed = seed;
  run.artifacts = {out};
  run.write(out);
  return 0;
}

int run_import(const std::vector<std::string>& train_csv, const std::vector<std::string>& test_csv,
               const std::string& out) {
  if (train_csv.empty() && test_csv.empty()) throw CLI::ValidationError("import", "give --csv or --test-csv");
  RunManifest run;
  run.command = "import";
  std::vector<alm::Record> records;
  for (const auto& p : train_csv) {
    auto r = alm::import_csv(p, alm::Split::kTrain);
    records.insert(records.end(), r.begin(), r.end());
  }
  for (const auto& p : test_csv) {
    auto r = alm::import_csv(p, alm::Split::kTest);
    records.insert(records.end(), r.begin(), r.end());
  }
  if (records.empty()) throw alm::Error("no records in the given CSV files");
  const alm::Dataset ds(std::move(records));
  alm::save_dataset(ds, out);
  run.config = {{"train_csv", train_csv}, {"test_csv", test_csv}};
  run.dataset_fingerprint = ds.fingerprint();
  run.artifacts = {out};
  run.write(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Authorship attribution with per-author language models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("alm ") + alm::kVersion + " (model format " +
                                        std::to_string(alm::kModelFormatVersion) + ", vocab format " +
                                        std::to_string(alm::kVocabFormatVersion) + ", almset format " +
                                        std::to_string(alm::kAlmSetFormatVersion) + ")");
  Common common;
  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };

  ConfigFlags flags;
  std::string dataset, out, vocab_path, models, report, confusion, predictions, grid = "2,5,10,20,40,70,100,200,400,800";
  std::vector<std::string> texts, csvs, test_csvs;
  bool use_stdin = false, quiet = false;
  std::size_t n_authors = 5, per_author = 200;
  std::uint64_t synth_seed = 0;
  std::uint32_t stats_vocab_size = 512;

  auto* train = app.add_subcommand("train", "Pretrain a base model and fine-tune one model per author");
  train->add_option("--dataset", dataset, "Dataset JSONL")->required();
  train->add_option("--out", out, "Output ALM set directory")->required();
  train->add_option("--vocab", vocab_path, "Reuse this vocab instead of fitting one")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "No per-epoch progress lines");
  flags.add_to(*train);
  add_jobs(train);

  auto* attribute = app.add_subcommand("attribute", "Attribute questioned texts (JSONL on stdout)");
  attribute->add_option("--models", models, "ALM set directory")->required();
  auto* text_opt = attribute->add_option("--text", texts, "Questioned text file (repeatable)")->check(CLI::ExistingFile);
  attribute->add_flag("--stdin", use_stdin, "Read one questioned text from stdin")->excludes(text_opt);
  add_jobs(attribute);

  auto* eval = app.add_subcommand("eval", "Per-author and macro-average accuracy on the test split");
  eval->add_option("--models", models, "ALM set directory")->required();
  eval->add_option("--dataset", dataset, "Dataset JSONL")->required();
  eval->add_option("--report", report, "Report CSV output")->required();
  eval->add_option("--confusion", confusion, "Confusion CSV output (default: <report>.confusion.csv)");
  eval->add_option("--predictions", predictions, "Per-text attribution JSONL output");
  add_jobs(eval);

  auto* abl = app.add_subcommand("ablate", "Accuracy with test texts truncated to each grid length");
  abl->add_option("--models", models, "ALM set directory")->required();
  abl->add_option("--dataset", dataset, "Dataset JSONL")->required();
  abl->add_option("--grid", grid, "Comma-separated ascending token lengths")->capture_default_str();
  abl->add_option("--out", out, "Ablation CSV output (default: stdout)");
  add_jobs(abl);

  auto* stats = app.add_subcommand("stats", "A, T, TK, T/A and TTL of a dataset");
  stats->add_option("--dataset", dataset, "Dataset JSONL")->required();
  auto* sv = stats->add_option("--vocab", vocab_path, "Vocab to count tokens with")->check(CLI::ExistingFile);
  stats->add_option("--models", models, "Use the vocab of this ALM set")->excludes(sv);
  stats->add_option("--vocab-size", stats_vocab_size, "Size of the BPE vocab fitted when no vocab is given")
      ->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-author corpus");
  synth->add_option("--authors", n_authors, "Number of authors")->capture_default_str();
  synth->add_option("--texts-per-author", per_author, "Texts per author")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Corpus seed")->capture_default_str();
  synth->add_option("--out", out, "Dataset JSONL output")->required();

  auto* import = app.add_subcommand("import", "Convert text,label CSV files to dataset JSONL");
  import->add_option("--csv", csvs, "Training-split CSV (repeatable)")->check(CLI::ExistingFile);
  import->add_option("--test-csv", test_csvs, "Test-split CSV (repeatable)")->check(CLI::ExistingFile);
  import->add_option("--out", out, "Dataset JSONL output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) return run_train(common, flags, dataset, out, vocab_path, quiet);
    if (*attribute) return run_attribute(common, models, texts, use_stdin);
    if (*eval) return run_eval(common, models, dataset, report, confusion, predictions);
    if (*abl) return run_ablate(common, models, dataset, grid, out);
    if (*stats) return run_stats(dataset, vocab_path, models, stats_vocab_size);
    if (*synth) return run_synth(n_authors, per_author, synth_seed, out);
    if (*import) return run_import(csvs, test_csvs, out);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 2;
}
