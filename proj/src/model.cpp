#include "alm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "alm/error.hpp"
#include "alm/kernels.hpp"

namespace alm {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

// Per-layer tensor order inside the layout.
enum LayerTensor : std::size_t {
  kLn1Gain,
  kLn1Bias,
  kQkvWeight,
  kQkvBias,
  kProjWeight,
  kProjBias,
  kLn2Gain,
  kLn2Bias,
  kFcWeight,
  kFcBias,
  kMlpProjWeight,
  kMlpProjBias,
  kTensorsPerLayer,
};

constexpr std::size_t kTokEmb = 0;
constexpr std::size_t kPosEmb = 1;

inline std::size_t layer_index(std::size_t layer, LayerTensor t) {
  return 2 + layer * kTensorsPerLayer + t;
}

template <typename T>
inline T gelu(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad(T x) {
  constexpr T c = T(0.7978845608028654);
  const T x2 = x * x;
  const T th = std::tanh(c * (x + T(0.044715) * x2 * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * x2);
}

// y = gain ⊙ (x − μ)/σ + bias, row-wise. Keeps μ and 1/σ for the backward pass.
template <typename T>
void layer_norm(const Matrix<T>& x, const T* gain, const T* bias, Matrix<T>& y,
                std::vector<T>& mean, std::vector<T>& rstd) {
  const std::size_t n = x.rows(), d = x.cols();
  y.resize(n, d);
  mean.resize(n);
  rstd.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const T m = static_cast<T>(mu);
    const T r = static_cast<T>(1.0 / std::sqrt(var + kLayerNormEps));
    mean[i] = m;
    rstd[i] = r;
    T* yr = y.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - m) * r * gain[j] + bias[j];
  }
}

// Accumulates dgain/dbias and adds ∂/∂x into dx.
template <typename T>
void layer_norm_backward(const Matrix<T>& x, const T* gain, const std::vector<T>& mean,
                         const std::vector<T>& rstd, const Matrix<T>& dy, T* dgain, T* dbias,
                         Matrix<T>& dx) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x.data() + i * d;
    const T* dyr = dy.data() + i * d;
    T sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean[i]) * rstd[i];
      dxhat[j] = dyr[j] * gain[j];
      dgain[j] += dyr[j] * xhat[j];
      dbias[j] += dyr[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
    }
    const T inv_d = T(1) / static_cast<T>(d);
    T* dxr = dx.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      dxr[j] += rstd[i] * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

template <typename T>
void add_column_sums(const Matrix<T>& m, T* out) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const T* r = m.data() + i * m.cols();
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j];
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (context_len < 2) fail("context_len must be at least 2");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    fail("d_model, n_layers, n_heads and d_ff must be positive");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
}

const TensorSpec& ParamLayout::find(std::string_view name) const {
  for (const TensorSpec& s : tensors) {
    if (s.name == name) return s;
  }
  throw Error("no parameter tensor named '" + std::string(name) + "'");
}

const TensorSpec& ParamLayout::owner(std::size_t index) const {
  auto it = std::upper_bound(tensors.begin(), tensors.end(), index,
                             [](std::size_t i, const TensorSpec& s) { return i < s.offset; });
  if (it == tensors.begin() || index >= total) throw Error("parameter index out of range");
  return *std::prev(it);
}

ParamLayout make_layout(const ModelConfig& c) {
  c.validate();
  ParamLayout layout;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t numel = 1;
    for (std::size_t s : shape) numel *= s;
    layout.tensors.push_back({std::move(name), std::move(shape), layout.total, numel});
    layout.total += numel;
  };
  const std::size_t d = c.d_model, f = c.d_ff;
  add("tok_emb", {c.vocab_size, d});
  add("pos_emb", {c.context_len, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    add(p + "ln1.g", {d});
    add(p + "ln1.b", {d});
    add(p + "attn.qkv.w", {d, 3 * d});
    add(p + "attn.qkv.b", {3 * d});
    add(p + "attn.proj.w", {d, d});
    add(p + "attn.proj.b", {d});
    add(p + "ln2.g", {d});
    add(p + "ln2.b", {d});
    add(p + "mlp.fc.w", {d, f});
    add(p + "mlp.fc.b", {f});
    add(p + "mlp.proj.w", {f, d});
    add(p + "mlp.proj.b", {d});
  }
  add("ln_f.g", {d});
  add("ln_f.b", {d});
  return layout;
}

template <typename T>
struct Transformer<T>::Cache {
  struct Layer {
    Matrix<T> x_in, ln1, qkv, att, h, ln2, fc, act;
    std::vector<T> mu1, rs1, mu2, rs2;
    std::vector<T> probs;  // [head][i][j], zero above the diagonal
  };
  std::vector<Layer> layers;
  Matrix<T> x_out, lnf, logits;
  std::vector<T> muf, rsf;
};

template <typename T>
Transformer<T>::Transformer(const ModelConfig& config)
    : config_(config),
      layout_(std::make_shared<const ParamLayout>(make_layout(config))),
      values_(layout_->total, T{}) {}

template <typename T>
Transformer<T> Transformer<T>::init(const ModelConfig& config, std::uint64_t seed) {
  Transformer m(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (const TensorSpec& s : m.layout_->tensors) {
    T* p = m.values_.data() + s.offset;
    const bool is_gain = s.name.ends_with(".g");
    const bool is_bias = s.name.ends_with(".b");
    for (std::size_t i = 0; i < s.numel; ++i) {
      p[i] = is_gain ? T(1) : is_bias ? T(0) : static_cast<T>(normal(rng));
    }
  }
  return m;
}

template <typename T>
std::span<T> Transformer<T>::tensor(std::string_view name) {
  const TensorSpec& s = layout_->find(name);
  return {values_.data() + s.offset, s.numel};
}

template <typename T>
std::span<const T> Transformer<T>::tensor(std::string_view name) const {
  const TensorSpec& s = layout_->find(name);
  return {values_.data() + s.offset, s.numel};
}

template <typename T>
void Transformer<T>::check_input(std::span<const TokenId> tokens) const {
  if (!layout_) throw Error("model has no parameters");
  if (tokens.empty()) throw Error("forward: empty token window");
  if (tokens.size() > config_.context_len) {
    throw Error("forward: window of " + std::to_string(tokens.size()) +
                " tokens exceeds context length " + std::to_string(config_.context_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) {
      throw Error("forward: token id " + std::to_string(tokens[i]) + " at position " +
                  std::to_string(i) + " is outside vocab of size " +
                  std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
void Transformer<T>::run_forward(std::span<const TokenId> tokens, Cache& cache) const {
  check_input(tokens);
  const std::size_t t = tokens.size();
  const std::size_t d = config_.d_model, f = config_.d_ff, nh = config_.n_heads;
  const std::size_t hd = config_.head_dim();
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto& ts = layout_->tensors;
  auto ptr = [&](std::size_t idx) { return values_.data() + ts[idx].offset; };

  Matrix<T> x(t, d);
  {
    const T* tok = ptr(kTokEmb);
    const T* pos = ptr(kPosEmb);
    for (std::size_t i = 0; i < t; ++i) {
      T* xr = x.data() + i * d;
      const T* er = tok + static_cast<std::size_t>(tokens[i]) * d;
      const T* pr = pos + i * d;
      for (std::size_t j = 0; j < d; ++j) xr[j] = er[j] + pr[j];
    }
  }

  cache.layers.resize(config_.n_layers);
  std::vector<T> scores(t);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    auto& L = cache.layers[l];
    L.x_in = std::move(x);

    layer_norm(L.x_in, ptr(layer_index(l, kLn1Gain)), ptr(layer_index(l, kLn1Bias)), L.ln1, L.mu1,
               L.rs1);
    L.qkv.resize(t, 3 * d);
    kernels::matmul(L.ln1.data(), ptr(layer_index(l, kQkvWeight)), ptr(layer_index(l, kQkvBias)),
                    L.qkv.data(), t, d, 3 * d);

    L.att.resize(t, d);
    L.probs.assign(nh * t * t, T{});
    for (std::size_t h = 0; h < nh; ++h) {
      T* P = L.probs.data() + h * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        const T* q = L.qkv.data() + i * 3 * d + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* k = L.qkv.data() + j * 3 * d + d + h * hd;
          T s = 0;
          for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
          scores[j] = s * att_scale;
          mx = std::max(mx, scores[j]);
        }
        T denom = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        const T inv = T(1) / denom;
        T* out = L.att.data() + i * d + h * hd;
        for (std::size_t e = 0; e < hd; ++e) out[e] = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T p = scores[j] * inv;
          P[i * t + j] = p;
          const T* v = L.qkv.data() + j * 3 * d + 2 * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) out[e] += p * v[e];
        }
      }
    }

    L.h.resize(t, d);
    kernels::matmul(L.att.data(), ptr(layer_index(l, kProjWeight)), ptr(layer_index(l, kProjBias)),
                    L.h.data(), t, d, d);
    for (std::size_t i = 0; i < t * d; ++i) L.h.data()[i] += L.x_in.data()[i];

    layer_norm(L.h, ptr(layer_index(l, kLn2Gain)), ptr(layer_index(l, kLn2Bias)), L.ln2, L.mu2,
               L.rs2);
    L.fc.resize(t, f);
    kernels::matmul(L.ln2.data(), ptr(layer_index(l, kFcWeight)), ptr(layer_index(l, kFcBias)),
                    L.fc.data(), t, d, f);
    L.act.resize(t, f);
    for (std::size_t i = 0; i < t * f; ++i) L.act.data()[i] = gelu(L.fc.data()[i]);

    x.resize(t, d);
    kernels::matmul(L.act.data(), ptr(layer_index(l, kMlpProjWeight)),
                    ptr(layer_index(l, kMlpProjBias)), x.data(), t, f, d);
    for (std::size_t i = 0; i < t * d; ++i) x.data()[i] += L.h.data()[i];
  }

  cache.x_out = std::move(x);
  const std::size_t lnf = ts.size() - 2;
  layer_norm(cache.x_out, ptr(lnf), ptr(lnf + 1), cache.lnf, cache.muf, cache.rsf);
  cache.logits.resize(t, config_.vocab_size);
  kernels::matmul_bt(cache.lnf.data(), ptr(kTokEmb), cache.logits.data(), t, d,
                     static_cast<std::size_t>(config_.vocab_size));
}

template <typename T>
Matrix<T> Transformer<T>::forward_native(std::span<const TokenId> tokens) const {
  Cache cache;
  run_forward(tokens, cache);
  return std::move(cache.logits);
}

template <typename T>
LogitsMatrix Transformer<T>::forward(std::span<const TokenId> tokens) const {
  const Matrix<T> native = forward_native(tokens);
  LogitsMatrix out(native.rows(), native.cols());
  std::copy(native.data(), native.data() + native.size(), out.data());
  return out;
}

template <typename T>
double Transformer<T>::accumulate_gradients(std::span<const TokenId> tokens, std::span<T> grad,
                                            T scale) const {
  if (tokens.size() < 2) throw Error("cross entropy: no predictable position (need 2 tokens)");
  if (grad.size() != values_.size()) throw Error("gradient buffer has the wrong size");
  Cache cache;
  run_forward(tokens, cache);

  const std::size_t t = tokens.size();
  const std::size_t V = config_.vocab_size;
  const std::size_t d = config_.d_model, f = config_.d_ff, nh = config_.n_heads;
  const std::size_t hd = config_.head_dim();
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto& ts = layout_->tensors;
  auto ptr = [&](std::size_t idx) { return values_.data() + ts[idx].offset; };
  auto gptr = [&](std::size_t idx) { return grad.data() + ts[idx].offset; };

  // Softmax cross-entropy: dlogits = scale · (softmax − onehot(next token)).
  double nll = 0.0;
  Matrix<T> dlogits(t, V);
  for (std::size_t i = 0; i + 1 < t; ++i) {
    const T* row = cache.logits.data() + i * V;
    double mx = row[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
    const double lse = mx + std::log(sum);
    const TokenId target = tokens[i + 1];
    nll += lse - static_cast<double>(row[target]);
    T* dr = dlogits.data() + i * V;
    for (std::size_t v = 0; v < V; ++v) {
      dr[v] = scale * static_cast<T>(std::exp(static_cast<double>(row[v]) - lse));
    }
    dr[target] -= scale;
  }

  // Tied head: logits = lnf · Eᵀ.
  Matrix<T> dx(t, d);
  {
    Matrix<T> dlnf(t, d);
    kernels::matmul(dlogits.data(), ptr(kTokEmb), static_cast<const T*>(nullptr), dlnf.data(), t, V, d);
    kernels::matmul_at_acc(dlogits.data(), cache.lnf.data(), gptr(kTokEmb), t, V, d);
    const std::size_t lnf = ts.size() - 2;
    layer_norm_backward(cache.x_out, ptr(lnf), cache.muf, cache.rsf, dlnf, gptr(lnf), gptr(lnf + 1),
                        dx);
  }

  Matrix<T> dact(t, f), dln(t, d), datt(t, d), dqkv(t, 3 * d);
  std::vector<T> dp(t);
  for (std::size_t li = config_.n_layers; li-- > 0;) {
    const auto& L = cache.layers[li];

    // MLP: x_out = h + act · W2 + b2, act = gelu(ln2 · W1 + b1).
    kernels::matmul_at_acc(L.act.data(), dx.data(), gptr(layer_index(li, kMlpProjWeight)), t, f, d);
    add_column_sums(dx, gptr(layer_index(li, kMlpProjBias)));
    kernels::matmul_bt(dx.data(), ptr(layer_index(li, kMlpProjWeight)), dact.data(), t, d, f);
    for (std::size_t i = 0; i < t * f; ++i) dact.data()[i] *= gelu_grad(L.fc.data()[i]);
    kernels::matmul_at_acc(L.ln2.data(), dact.data(), gptr(layer_index(li, kFcWeight)), t, d, f);
    add_column_sums(dact, gptr(layer_index(li, kFcBias)));
    kernels::matmul_bt(dact.data(), ptr(layer_index(li, kFcWeight)), dln.data(), t, f, d);
    Matrix<T> dh = dx;
    layer_norm_backward(L.h, ptr(layer_index(li, kLn2Gain)), L.mu2, L.rs2, dln,
                        gptr(layer_index(li, kLn2Gain)), gptr(layer_index(li, kLn2Bias)), dh);

    // Attention: h = x_in + att · Wo + bo.
    kernels::matmul_at_acc(L.att.data(), dh.data(), gptr(layer_index(li, kProjWeight)), t, d, d);
    add_column_sums(dh, gptr(layer_index(li, kProjBias)));
    kernels::matmul_bt(dh.data(), ptr(layer_index(li, kProjWeight)), datt.data(), t, d, d);

    dqkv.fill(T{});
    for (std::size_t h = 0; h < nh; ++h) {
      const T* P = L.probs.data() + h * t * t;
      for (std::size_t i = 0; i < t; ++i) {
        const T* da = datt.data() + i * d + h * hd;
        const T* q = L.qkv.data() + i * 3 * d + h * hd;
        T* dq = dqkv.data() + i * 3 * d + h * hd;
        T dot_pdp = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T* v = L.qkv.data() + j * 3 * d + 2 * d + h * hd;
          T* dv = dqkv.data() + j * 3 * d + 2 * d + h * hd;
          const T p = P[i * t + j];
          T s = 0;
          for (std::size_t e = 0; e < hd; ++e) {
            s += da[e] * v[e];
            dv[e] += p * da[e];
          }
          dp[j] = s;
          dot_pdp += p * s;
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const T ds = P[i * t + j] * (dp[j] - dot_pdp) * att_scale;
          const T* k = L.qkv.data() + j * 3 * d + d + h * hd;
          T* dk = dqkv.data() + j * 3 * d + d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) {
            dq[e] += ds * k[e];
            dk[e] += ds * q[e];
          }
        }
      }
    }
    kernels::matmul_at_acc(L.ln1.data(), dqkv.data(), gptr(layer_index(li, kQkvWeight)), t, d, 3 * d);
    add_column_sums(dqkv, gptr(layer_index(li, kQkvBias)));
    kernels::matmul_bt(dqkv.data(), ptr(layer_index(li, kQkvWeight)), dln.data(), t, 3 * d, d);
    dx = std::move(dh);
    layer_norm_backward(L.x_in, ptr(layer_index(li, kLn1Gain)), L.mu1, L.rs1, dln,
                        gptr(layer_index(li, kLn1Gain)), gptr(layer_index(li, kLn1Bias)), dx);
  }

  T* dtok = gptr(kTokEmb);
  T* dpos = gptr(kPosEmb);
  for (std::size_t i = 0; i < t; ++i) {
    const T* r = dx.data() + i * d;
    T* te = dtok + static_cast<std::size_t>(tokens[i]) * d;
    T* pe = dpos + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += r[j];
      pe[j] += r[j];
    }
  }
  return nll;
}

double cross_entropy(const LogitsMatrix& logits, std::span<const TokenId> tokens) {
  const std::size_t t = tokens.size();
  if (t < 2) throw Error("cross entropy: no predictable position (need 2 tokens)");
  if (logits.rows() != t) {
    throw Error("cross entropy: " + std::to_string(logits.rows()) + " logit rows for " +
                std::to_string(t) + " tokens");
  }
  const std::size_t V = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    const TokenId target = tokens[i + 1];
    if (target >= V) throw Error("cross entropy: target id out of range");
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += (mx + std::log(sum)) - row[target];
  }
  return total / static_cast<double>(t - 1);
}

template <typename T>
Gradients<T> backward(const Transformer<T>& model, std::span<const TokenId> tokens) {
  Gradients<T> g;
  g.layout = model.shared_layout();
  g.values.assign(model.values().size(), T{});
  const double n = static_cast<double>(tokens.size() >= 2 ? tokens.size() - 1 : 1);
  const double nll = model.accumulate_gradients(tokens, g.values, static_cast<T>(1.0 / n));
  g.loss = nll / n;
  return g;
}

template class Transformer<float>;
template class Transformer<double>;
template Gradients<float> backward(const Transformer<float>&, std::span<const TokenId>);
template Gradients<double> backward(const Transformer<double>&, std::span<const TokenId>);

}  // namespace alm
