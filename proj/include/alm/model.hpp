#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "alm/matrix.hpp"
#include "alm/tokenizer.hpp"

namespace alm {

struct ModelConfig {
  std::uint32_t vocab_size = 512;
  std::uint32_t context_len = 128;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;

  // Throws alm::Error on any inconsistent field.
  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t numel = 0;
};

// Named tensors laid out back to back in one flat buffer.
struct ParamLayout {
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;

  const TensorSpec& find(std::string_view name) const;
  // Tensor owning flat coordinate `index`.
  const TensorSpec& owner(std::size_t index) const;
};

ParamLayout make_layout(const ModelConfig& config);

// Unnormalized next-token scores, one row per input position.
using LogitsMatrix = Matrix<double>;

// Anything that maps a token window to next-token logits. Row i of the result
// may depend on tokens[0..i] only.
class CausalLm {
 public:
  virtual ~CausalLm() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t context_len() const = 0;
  virtual LogitsMatrix forward(std::span<const TokenId> tokens) const = 0;
};

template <typename T>
struct Gradients {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<T> values;
  double loss = 0.0;  // mean next-token CE the gradient belongs to

  std::span<const T> tensor(std::string_view name) const {
    const TensorSpec& s = layout->find(name);
    return {values.data() + s.offset, s.numel};
  }
};

// Pre-norm GPT-style decoder: learned position embeddings, GELU MLP, and an
// output head tied to the token embeddings.
template <typename T>
class Transformer final : public CausalLm {
 public:
  Transformer() = default;
  // All-zero parameters of the right shapes.
  explicit Transformer(const ModelConfig& config);

  // N(0, 0.02²) embeddings and weight matrices, zero biases, unit gains.
  static Transformer init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const ParamLayout>& shared_layout() const noexcept { return layout_; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t context_len() const override { return config_.context_len; }
  LogitsMatrix forward(std::span<const TokenId> tokens) const override;

  // Logits in the parameter precision.
  Matrix<T> forward_native(std::span<const TokenId> tokens) const;

  // Adds scale · ∂(Σ next-token NLL)/∂θ into grad and returns the summed NLL
  // (nats, over tokens.size() - 1 positions).
  double accumulate_gradients(std::span<const TokenId> tokens, std::span<T> grad, T scale) const;

  template <typename U>
  Transformer<U> cast() const {
    Transformer<U> out(config_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<U>(values_[i]);
    return out;
  }

  friend bool operator==(const Transformer& a, const Transformer& b) {
    return a.config_ == b.config_ && a.values_ == b.values_;
  }

 private:
  struct Cache;
  void run_forward(std::span<const TokenId> tokens, Cache& cache) const;
  void check_input(std::span<const TokenId> tokens) const;

  ModelConfig config_{};
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T> values_;
};

using Model = Transformer<float>;

// Mean of −log softmax(logits[i])[tokens[i+1]] over i = 0..t−2, stabilized by
// max subtraction. Requires logits.rows() == tokens.size() ≥ 2.
double cross_entropy(const LogitsMatrix& logits, std::span<const TokenId> tokens);

// ∂CE/∂θ for the window `tokens`, with targets = tokens shifted by one.
template <typename T>
Gradients<T> backward(const Transformer<T>& model, std::span<const TokenId> tokens);

}  // namespace alm
