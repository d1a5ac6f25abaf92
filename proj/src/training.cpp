#include "alm/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <json.hpp>

#include "alm/dataset.hpp"
#include "alm/error.hpp"
#include "alm/model_io.hpp"
#include "alm/optim.hpp"

namespace alm {
namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kPretrainShuffleSalt = 0x9e3779b97f4a7c15ULL;

std::vector<std::pair<const char*, std::uint32_t TrainingConfig::*>> uint_fields() {
  return {{"vocab_size", &TrainingConfig::vocab_size},
          {"context_len", &TrainingConfig::context_len},
          {"d_model", &TrainingConfig::d_model},
          {"n_layers", &TrainingConfig::n_layers},
          {"n_heads", &TrainingConfig::n_heads},
          {"d_ff", &TrainingConfig::d_ff},
          {"pretrain_epochs", &TrainingConfig::pretrain_epochs},
          {"finetune_epochs", &TrainingConfig::finetune_epochs},
          {"batch_size", &TrainingConfig::batch_size},
          {"stride", &TrainingConfig::stride}};
}

ordered_json config_json(const TrainingConfig& c) {
  ordered_json j;
  for (const auto& [name, field] : uint_fields()) j[name] = c.*field;
  j["lr_pretrain"] = c.lr_pretrain;
  j["lr_finetune"] = c.lr_finetune;
  j["seed"] = c.seed;
  return j;
}

TrainingConfig merge_config(TrainingConfig c, const nlohmann::json& j) {
  if (!j.is_object()) throw Error("training config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto bad = [&](const char* want) { throw Error("config field '" + key + "' must be " + want); };
    if (key == "lr_pretrain" || key == "lr_finetune") {
      if (!value.is_number()) bad("a number");
      (key == "lr_pretrain" ? c.lr_pretrain : c.lr_finetune) = value.get<double>();
      continue;
    }
    if (key == "seed") {
      if (!value.is_number_unsigned()) bad("a non-negative integer");
      c.seed = value.get<std::uint64_t>();
      continue;
    }
    bool known = false;
    for (const auto& [name, field] : uint_fields()) {
      if (key != name) continue;
      known = true;
      if (!value.is_number_unsigned() || value.get<std::uint64_t>() > UINT32_MAX) {
        bad("a non-negative 32-bit integer");
      }
      c.*field = value.get<std::uint32_t>();
    }
    if (!known) throw Error("unknown config field '" + key + "'");
  }
  return c;
}

std::size_t scored_positions(const TokenSequence& w) { return w.size() - 1; }

// Shuffled mini-batch Adam over fixed windows. Windows inside a batch are
// differentiated concurrently into private buffers that are then summed in
// window order, so the result does not depend on the thread count.
void run_epochs(Model& model, const std::vector<TokenSequence>& windows, std::uint32_t epochs,
                double lr, std::uint32_t batch_size, std::mt19937_64& rng, const TrainingHooks& hooks,
                const std::string& tag) {
  if (epochs == 0 || windows.empty()) return;
  const std::size_t P = model.values().size();
  const int jobs = std::max(1, hooks.jobs);
  AdamState<float> state;
  std::vector<float> grad(P);
  std::vector<std::vector<float>> bufs(std::min<std::size_t>(batch_size, windows.size()),
                                       std::vector<float>(P));
  std::vector<double> losses(bufs.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::uint32_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t n = std::min<std::size_t>(batch_size, order.size() - begin);
      std::size_t tokens = 0;
      for (std::size_t i = 0; i < n; ++i) tokens += scored_positions(windows[order[begin + i]]);
      const float scale = 1.0f / static_cast<float>(tokens);

      std::exception_ptr failure;
#pragma omp parallel for num_threads(jobs) schedule(static) if (jobs > 1 && n > 1)
      for (std::size_t i = 0; i < n; ++i) {
        try {
          std::fill(bufs[i].begin(), bufs[i].end(), 0.0f);
          losses[i] = model.accumulate_gradients(windows[order[begin + i]].span(), bufs[i], scale);
        } catch (...) {
#pragma omp critical(alm_train_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      std::copy(bufs[0].begin(), bufs[0].end(), grad.begin());
      for (std::size_t i = 1; i < n; ++i) {
        const float* b = bufs[i].data();
        for (std::size_t k = 0; k < P; ++k) grad[k] += b[k];
      }
      for (std::size_t i = 0; i < n; ++i) epoch_nll += losses[i];
      epoch_tokens += tokens;

      check_finite_gradients<float>(model.layout(), grad);
      adam_step<float>(model, grad, state, lr);
    }
    if (hooks.log) {
      *hooks.log << tag << " epoch " << (epoch + 1) << "/" << epochs << " loss "
                 << epoch_nll / static_cast<double>(epoch_tokens) << '\n';
    }
  }
}

std::string sanitize_label(std::string_view label) {
  std::string out;
  for (char ch : label) {
    const auto c = static_cast<unsigned char>(ch);
    out += (std::isalnum(c) || c == '_' || c == '-' || c == '.') ? ch : '_';
  }
  if (out.empty() || out.find_first_not_of('.') == std::string::npos) out = "_" + out;
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

void TrainingConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid training config: " + what); };
  if (vocab_size < kByteTokens) fail("vocab_size must be at least 256");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(lr_pretrain > 0.0) || !std::isfinite(lr_pretrain)) fail("lr_pretrain must be positive");
  if (!(lr_finetune > 0.0) || !std::isfinite(lr_finetune)) fail("lr_finetune must be positive");
  model_config(vocab_size).validate();
}

ModelConfig TrainingConfig::model_config(std::uint32_t actual_vocab_size) const {
  return ModelConfig{actual_vocab_size, context_len, d_model, n_layers, n_heads, d_ff};
}

std::string training_config_to_json(const TrainingConfig& config) { return config_json(config).dump(); }

TrainingConfig merge_training_config(TrainingConfig base, std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::parse_error&) {
    throw Error("training config is not valid JSON");
  }
  return merge_config(std::move(base), j);
}

std::size_t AlmSet::author_index(std::string_view label) const {
  auto it = std::find(authors.begin(), authors.end(), label);
  if (it == authors.end()) throw Error("unknown author '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - authors.begin());
}

std::vector<TokenSequence> pack_windows(std::span<const TokenSequence> texts, std::size_t window,
                                        std::size_t stride) {
  if (window < 2) throw Error("pack_windows: window must be at least 2");
  if (stride == 0) stride = window;
  std::vector<TokenId> stream;
  for (const TokenSequence& t : texts) stream.insert(stream.end(), t.ids.begin(), t.ids.end());
  std::vector<TokenSequence> out;
  for (std::size_t start = 0; start < stream.size(); start += stride) {
    const std::size_t len = std::min(window, stream.size() - start);
    if (len >= 2) out.push_back({{stream.begin() + start, stream.begin() + start + len}});
    if (start + len == stream.size()) break;
  }
  return out;
}

double corpus_cross_entropy(const Model& model, std::span<const TokenSequence> texts, std::size_t stride) {
  const auto windows = pack_windows(texts, model.context_len(), stride);
  if (windows.empty()) throw Error("corpus has fewer than 2 tokens");
  double total = 0.0;
  std::size_t count = 0;
  for (const TokenSequence& w : windows) {
    total += cross_entropy(model.forward(w.span()), w.span()) * static_cast<double>(w.size() - 1);
    count += w.size() - 1;
  }
  return total / static_cast<double>(count);
}

Model pretrain_base(std::span<const TokenSequence> pooled, const ModelConfig& model_config,
                    const TrainingConfig& config, const TrainingHooks& hooks) {
  config.validate();
  std::size_t tokens = 0;
  for (const TokenSequence& t : pooled) tokens += t.size();
  if (tokens < model_config.context_len) {
    throw Error("pooled corpus has " + std::to_string(tokens) + " tokens, shorter than one context window (" +
                std::to_string(model_config.context_len) + ")");
  }
  Model model = Model::init(model_config, config.seed);
  const auto windows = pack_windows(pooled, model_config.context_len, config.effective_stride());
  std::mt19937_64 rng(config.seed ^ kPretrainShuffleSalt);
  run_epochs(model, windows, config.pretrain_epochs, config.lr_pretrain, config.batch_size, rng, hooks,
             "pretrain");
  return model;
}

Model finetune_author(const Model& base, std::span<const TokenSequence> corpus, const TrainingConfig& config,
                      std::size_t author_index, std::string_view author_label, const TrainingHooks& hooks) {
  config.validate();
  if (base.config() != config.model_config(base.config().vocab_size)) {
    throw Error("base model config does not match the training config");
  }
  std::size_t tokens = 0;
  for (const TokenSequence& t : corpus) tokens += t.size();
  if (tokens < 2) {
    throw Error("author '" + std::string(author_label) + "' has fewer than 2 training tokens");
  }
  Model model = base;
  const auto windows = pack_windows(corpus, base.config().context_len, config.effective_stride());
  std::mt19937_64 rng(config.seed ^ static_cast<std::uint64_t>(author_index));
  run_epochs(model, windows, config.finetune_epochs, config.lr_finetune, config.batch_size, rng, hooks,
             "finetune " + std::string(author_label));
  return model;
}

AlmSet build_alm_set(const Dataset& dataset, const TrainingConfig& config, const TrainingHooks& hooks,
                     std::optional<Vocab> vocab) {
  config.validate();
  if (dataset.authors().size() < 2) throw Error("training needs at least 2 authors");
  const auto missing = dataset.authors_without_training();
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "'" : ", '") + m + "'";
    throw Error("authors without training texts: " + names);
  }

  std::vector<std::string> train_texts;
  for (const Record* r : dataset.records_of(Split::kTrain)) train_texts.push_back(r->text);
  if (!vocab) vocab = train_bpe(train_texts, config.vocab_size);

  std::vector<TokenSequence> pooled;
  pooled.reserve(train_texts.size());
  for (const std::string& t : train_texts) pooled.push_back(vocab->encode(t));

  AlmSet alms;
  alms.config = config;
  alms.dataset_fingerprint = dataset.fingerprint();
  alms.authors = dataset.authors();
  const ModelConfig mc = config.model_config(static_cast<std::uint32_t>(vocab->size()));
  alms.base = pretrain_base(pooled, mc, config, hooks);
  if (hooks.log) {
    *hooks.log << "pretrain pooled CE " << corpus_cross_entropy(alms.base, pooled, config.effective_stride())
               << '\n';
  }
  for (std::size_t a = 0; a < alms.authors.size(); ++a) {
    std::vector<TokenSequence> corpus;
    for (const std::string& t : dataset.texts(alms.authors[a], Split::kTrain)) corpus.push_back(vocab->encode(t));
    alms.models.push_back(finetune_author(alms.base, corpus, config, a, alms.authors[a], hooks));
  }
  alms.vocab = std::move(*vocab);
  return alms;
}

std::string author_model_filename(std::string_view label) {
  return "author_" + sanitize_label(label) + ".almm";
}

void save_alm_set(const AlmSet& alms, const std::filesystem::path& dir) {
  if (alms.models.size() != alms.authors.size()) throw Error("ALM set has mismatched authors and models");
  std::filesystem::create_directories(dir);
  alms.vocab.save(dir / "vocab.almvocab");
  save_model(alms.base, dir / "base.almm");

  ordered_json manifest;
  manifest["format"] = "almset";
  manifest["format_version"] = kAlmSetFormatVersion;
  manifest["model_format_version"] = kModelFormatVersion;
  manifest["vocab_file"] = "vocab.almvocab";
  manifest["base_file"] = "base.almm";
  ordered_json authors = ordered_json::array();
  std::set<std::string> used;
  for (std::size_t i = 0; i < alms.authors.size(); ++i) {
    std::string file = author_model_filename(alms.authors[i]);
    if (!used.insert(file).second) {
      file = "author_" + sanitize_label(alms.authors[i]) + "_" + std::to_string(i) + ".almm";
      if (!used.insert(file).second) throw Error("cannot derive a unique file name for '" + alms.authors[i] + "'");
    }
    save_model(alms.models[i], dir / file);
    authors.push_back({{"label", alms.authors[i]}, {"file", file}});
  }
  manifest["authors"] = std::move(authors);
  manifest["vocab_size"] = alms.vocab.size();
  manifest["training_config"] = config_json(alms.config);
  manifest["seed"] = alms.config.seed;
  manifest["dataset_fingerprint"] = alms.dataset_fingerprint;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

AlmSet load_alm_set(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_binary_file(manifest_path));
  } catch (const nlohmann::json::parse_error&) {
    throw Error(manifest_path.string() + ": malformed JSON");
  }
  try {
    if (m.at("format") != "almset") throw Error("not an ALM set manifest");
    if (m.at("format_version") != kAlmSetFormatVersion) {
      throw Error("unsupported ALM set format version " + m.at("format_version").dump());
    }
    AlmSet alms;
    alms.config = merge_config(TrainingConfig{}, m.at("training_config"));
    alms.dataset_fingerprint = m.at("dataset_fingerprint").get<std::string>();
    alms.vocab = Vocab::load(dir / m.at("vocab_file").get<std::string>());
    alms.base = load_model(dir / m.at("base_file").get<std::string>());
    const ModelConfig expected = alms.config.model_config(static_cast<std::uint32_t>(alms.vocab.size()));
    if (alms.base.config() != expected) throw Error("base model config does not match the manifest");
    for (const auto& a : m.at("authors")) {
      alms.authors.push_back(a.at("label").get<std::string>());
      alms.models.push_back(load_model(dir / a.at("file").get<std::string>()));
      if (alms.models.back().config() != expected) {
        throw Error("model for author '" + alms.authors.back() + "' has a different config");
      }
    }
    if (alms.authors.empty()) throw Error("manifest lists no authors");
    return alms;
  } catch (const nlohmann::json::exception& e) {
    throw Error(manifest_path.string() + ": bad manifest field");
  }
}

}  // namespace alm
