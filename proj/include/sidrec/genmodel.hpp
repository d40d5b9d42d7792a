// Copyright 2026 The sidrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// A small decoder-only autoregressive model over the SID vocabulary with
// hand-derived gradients: token/positional embeddings, pre-norm transformer
// blocks (causal self-attention + GELU feed-forward), SFT training, optimizer
// updates, and bit-exact binary checkpoints.

#ifndef SIDREC_GENMODEL_HPP
#define SIDREC_GENMODEL_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/jsonl.hpp"
#include "sidrec/vocab.hpp"

namespace sidrec {

struct GenConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context = 128;

  int d_ff() const { return 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const GenConfig& a, const GenConfig& b) {
    return a.vocab_size == b.vocab_size && a.d_model == b.d_model &&
           a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.context == b.context;
  }
};

inline void validate_gen_config(const GenConfig& cfg) {
  require(cfg.vocab_size >= 4, ErrorKind::config, "GenConfig: vocab_size must be at least 4");
  require(cfg.d_model >= 2, ErrorKind::config, "GenConfig: d_model must be at least 2");
  require(cfg.n_layers >= 1, ErrorKind::config, "GenConfig: n_layers must be at least 1");
  require(cfg.n_heads >= 1 && cfg.d_model % cfg.n_heads == 0, ErrorKind::config,
          "GenConfig: n_heads must divide d_model");
  require(cfg.context >= 2, ErrorKind::config, "GenConfig: context must be at least 2");
}

inline Json gen_config_to_json(const GenConfig& cfg) {
  return Json{{"vocab_size", cfg.vocab_size},
              {"d_model", cfg.d_model},
              {"n_layers", cfg.n_layers},
              {"n_heads", cfg.n_heads},
              {"context", cfg.context}};
}

inline GenConfig gen_config_from_json(const Json& j) {
  GenConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.context = j.at("context").get<int>();
  return cfg;
}

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

template <typename Scalar>
class GenModelT {
 public:
  GenConfig cfg;
  std::uint64_t seed = 0;
  std::vector<Scalar> params;
  std::vector<TensorSpec> manifest;

  GenModelT() = default;

  explicit GenModelT(const GenConfig& config) : cfg(config) {
    validate_gen_config(cfg);
    build_manifest();
    params.assign(total_size_, Scalar(0));
  }

  std::size_t param_count() const { return params.size(); }

  const TensorSpec& spec(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::contract, "GenModel: unknown tensor " + name);
    return manifest[it->second];
  }

  Scalar* data(const std::string& name) { return params.data() + spec(name).offset; }
  const Scalar* data(const std::string& name) const {
    return params.data() + spec(name).offset;
  }

  // Gaussian init (std 0.02) for embeddings and weight matrices; zero biases;
  // unit layer-norm gains.
  void init(std::uint64_t init_seed) {
    seed = init_seed;
    Rng rng(init_seed);
    for (const auto& t : manifest) {
      Scalar* p = params.data() + t.offset;
      const std::string base = t.name.substr(t.name.find_last_of('.') + 1);
      const bool is_gain = base == "g";
      const bool is_bias = !base.empty() && base[0] == 'b';
      if (is_gain) {
        std::fill(p, p + t.size, Scalar(1));
      } else if (is_bias) {
        std::fill(p, p + t.size, Scalar(0));
      } else {
        for (std::size_t i = 0; i < t.size; ++i) {
          p[i] = static_cast<Scalar>(0.02 * rng.next_normal());
        }
      }
    }
  }

  template <typename Other>
  GenModelT<Other> cast() const {
    GenModelT<Other> out(cfg);
    out.seed = seed;
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.params[i] = static_cast<Other>(params[i]);
    }
    return out;
  }

 private:
  std::map<std::string, std::size_t> index_;
  std::size_t total_size_ = 0;

  void add_tensor(const std::string& name, std::vector<int> shape) {
    TensorSpec t;
    t.name = name;
    t.shape = std::move(shape);
    t.offset = total_size_;
    t.size = 1;
    for (int s : t.shape) {
      t.size *= static_cast<std::size_t>(s);
    }
    total_size_ += t.size;
    index_.emplace(t.name, manifest.size());
    manifest.push_back(std::move(t));
  }

  void build_manifest() {
    const int d = cfg.d_model;
    const int f = cfg.d_ff();
    add_tensor("tok_emb", {cfg.vocab_size, d});
    add_tensor("pos_emb", {cfg.context, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "blk" + std::to_string(l) + ".";
      add_tensor(p + "ln1.g", {d});
      add_tensor(p + "ln1.b", {d});
      add_tensor(p + "attn.wq", {d, d});
      add_tensor(p + "attn.bq", {d});
      add_tensor(p + "attn.wk", {d, d});
      add_tensor(p + "attn.bk", {d});
      add_tensor(p + "attn.wv", {d, d});
      add_tensor(p + "attn.bv", {d});
      add_tensor(p + "attn.wo", {d, d});
      add_tensor(p + "attn.bo", {d});
      add_tensor(p + "ln2.g", {d});
      add_tensor(p + "ln2.b", {d});
      add_tensor(p + "ffn.w1", {d, f});
      add_tensor(p + "ffn.b1", {f});
      add_tensor(p + "ffn.w2", {f, d});
      add_tensor(p + "ffn.b2", {d});
    }
    add_tensor("lnf.g", {d});
    add_tensor("lnf.b", {d});
    add_tensor("wout", {d, cfg.vocab_size});
    add_tensor("bout", {cfg.vocab_size});
  }
};

using GenModel = GenModelT<float>;

namespace nn {

// y[T,out] = x[T,in] @ W[in,out] + b[out]
template <typename S>
void linear_forward(const S* x, const S* W, const S* b, S* y, int T, int in, int out) {
  for (int t = 0; t < T; ++t) {
    S* yt = y + static_cast<std::size_t>(t) * out;
    for (int o = 0; o < out; ++o) {
      yt[o] = b[o];
    }
    const S* xt = x + static_cast<std::size_t>(t) * in;
    for (int i = 0; i < in; ++i) {
      const S xi = xt[i];
      const S* Wi = W + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) {
        yt[o] += xi * Wi[o];
      }
    }
  }
}

// Accumulates dW/db and (optionally) writes dx.
template <typename S>
void linear_backward(const S* x, const S* W, const S* dy, S* dx, S* dW, S* db, int T,
                     int in, int out) {
  for (int t = 0; t < T; ++t) {
    const S* dyt = dy + static_cast<std::size_t>(t) * out;
    const S* xt = x + static_cast<std::size_t>(t) * in;
    for (int o = 0; o < out; ++o) {
      db[o] += dyt[o];
    }
    for (int i = 0; i < in; ++i) {
      const S xi = xt[i];
      S* dWi = dW + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) {
        dWi[o] += xi * dyt[o];
      }
    }
    if (dx != nullptr) {
      S* dxt = dx + static_cast<std::size_t>(t) * in;
      for (int i = 0; i < in; ++i) {
        const S* Wi = W + static_cast<std::size_t>(i) * out;
        S acc = S(0);
        for (int o = 0; o < out; ++o) {
          acc += dyt[o] * Wi[o];
        }
        dxt[i] = acc;
      }
    }
  }
}

inline constexpr double kLnEps = 1e-5;

// Per-row layer norm; caches the normalized rows and reciprocal std.
template <typename S>
void layernorm_forward(const S* x, const S* g, const S* b, S* y, S* norm, S* rstd, int T,
                       int d) {
  for (int t = 0; t < T; ++t) {
    const S* xt = x + static_cast<std::size_t>(t) * d;
    S mean = S(0);
    for (int i = 0; i < d; ++i) {
      mean += xt[i];
    }
    mean /= static_cast<S>(d);
    S var = S(0);
    for (int i = 0; i < d; ++i) {
      const S c = xt[i] - mean;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S r = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    rstd[t] = r;
    S* nt = norm + static_cast<std::size_t>(t) * d;
    S* yt = y + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      nt[i] = (xt[i] - mean) * r;
      yt[i] = nt[i] * g[i] + b[i];
    }
  }
}

template <typename S>
void layernorm_backward(const S* norm, const S* rstd, const S* g, const S* dy, S* dx,
                        S* dg, S* db, int T, int d) {
  for (int t = 0; t < T; ++t) {
    const S* nt = norm + static_cast<std::size_t>(t) * d;
    const S* dyt = dy + static_cast<std::size_t>(t) * d;
    S* dxt = dx + static_cast<std::size_t>(t) * d;
    S mean_dn = S(0), mean_dn_n = S(0);
    for (int i = 0; i < d; ++i) {
      dg[i] += dyt[i] * nt[i];
      db[i] += dyt[i];
      const S dn = dyt[i] * g[i];
      mean_dn += dn;
      mean_dn_n += dn * nt[i];
    }
    mean_dn /= static_cast<S>(d);
    mean_dn_n /= static_cast<S>(d);
    for (int i = 0; i < d; ++i) {
      const S dn = dyt[i] * g[i];
      dxt[i] = (dn - mean_dn - nt[i] * mean_dn_n) * rstd[t];
    }
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

template <typename S>
S gelu(S x) {
  const S u = static_cast<S>(kGeluC) * (x + static_cast<S>(kGeluA) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <typename S>
S gelu_grad(S x) {
  const S u = static_cast<S>(kGeluC) * (x + static_cast<S>(kGeluA) * x * x * x);
  const S th = std::tanh(u);
  const S du = static_cast<S>(kGeluC) * (S(1) + S(3) * static_cast<S>(kGeluA) * x * x);
  return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * du;
}

}  // namespace nn

template <typename Scalar>
struct ForwardCache {
  int T = 0;

  struct Layer {
    std::vector<Scalar> input;        // [T,d] residual-stream input to the block
    std::vector<Scalar> ln1_norm;     // [T,d]
    std::vector<Scalar> ln1_rstd;     // [T]
    std::vector<Scalar> ln1_out;      // [T,d]
    std::vector<Scalar> q, k, v;      // [T,d]
    std::vector<Scalar> probs;        // [heads*T*T] row-softmaxed causal scores
    std::vector<Scalar> ctx;          // [T,d] head-concatenated attention context
    std::vector<Scalar> after_attn;   // [T,d] residual after attention
    std::vector<Scalar> ln2_norm;     // [T,d]
    std::vector<Scalar> ln2_rstd;     // [T]
    std::vector<Scalar> ln2_out;      // [T,d]
    std::vector<Scalar> ffn_pre;      // [T,f]
    std::vector<Scalar> ffn_act;      // [T,f]
  };

  std::vector<Scalar> x0;        // [T,d] token+positional embeddings
  std::vector<Layer> layers;
  std::vector<Scalar> final_in;  // [T,d] residual stream entering the final norm
  std::vector<Scalar> lnf_norm;  // [T,d]
  std::vector<Scalar> lnf_rstd;  // [T]
  std::vector<Scalar> lnf_out;   // [T,d]
  std::vector<Scalar> logits;    // [T,V] (only the last row when last_only)
  bool last_only = false;
};

template <typename Scalar>
void gen_forward(const GenModelT<Scalar>& m, const std::vector<int>& tokens,
                 ForwardCache<Scalar>& cache, bool last_only = false) {
  const int T = static_cast<int>(tokens.size());
  const int d = m.cfg.d_model;
  const int f = m.cfg.d_ff();
  const int V = m.cfg.vocab_size;
  const int heads = m.cfg.n_heads;
  const int dh = m.cfg.head_dim();
  require(T >= 1, ErrorKind::contract, "gen_forward: empty token sequence");
  require(T <= m.cfg.context, ErrorKind::contract,
          "gen_forward: sequence length " + std::to_string(T) + " exceeds context " +
              std::to_string(m.cfg.context));
  for (int tok : tokens) {
    require(tok >= 0 && tok < V, ErrorKind::contract,
            "gen_forward: token id " + std::to_string(tok) + " outside vocabulary");
  }

  cache.T = T;
  cache.last_only = last_only;
  cache.layers.assign(m.cfg.n_layers, {});
  cache.x0.assign(static_cast<std::size_t>(T) * d, Scalar(0));

  const Scalar* tok_emb = m.data("tok_emb");
  const Scalar* pos_emb = m.data("pos_emb");
  for (int t = 0; t < T; ++t) {
    const Scalar* e = tok_emb + static_cast<std::size_t>(tokens[t]) * d;
    const Scalar* p = pos_emb + static_cast<std::size_t>(t) * d;
    Scalar* x = cache.x0.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      x[i] = e[i] + p[i];
    }
  }

  std::vector<Scalar> x = cache.x0;
  const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  for (int l = 0; l < m.cfg.n_layers; ++l) {
    auto& L = cache.layers[l];
    const std::string p = "blk" + std::to_string(l) + ".";
    L.input = x;

    L.ln1_norm.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    L.ln1_rstd.assign(T, Scalar(0));
    L.ln1_out.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    nn::layernorm_forward(x.data(), m.data(p + "ln1.g"), m.data(p + "ln1.b"),
                          L.ln1_out.data(), L.ln1_norm.data(), L.ln1_rstd.data(), T, d);

    L.q.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    L.k.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    L.v.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    nn::linear_forward(L.ln1_out.data(), m.data(p + "attn.wq"), m.data(p + "attn.bq"),
                       L.q.data(), T, d, d);
    nn::linear_forward(L.ln1_out.data(), m.data(p + "attn.wk"), m.data(p + "attn.bk"),
                       L.k.data(), T, d, d);
    nn::linear_forward(L.ln1_out.data(), m.data(p + "attn.wv"), m.data(p + "attn.bv"),
                       L.v.data(), T, d, d);

    L.probs.assign(static_cast<std::size_t>(heads) * T * T, Scalar(0));
    L.ctx.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    std::vector<Scalar> row(T);
    for (int h = 0; h < heads; ++h) {
      for (int t = 0; t < T; ++t) {
        const Scalar* qt = L.q.data() + static_cast<std::size_t>(t) * d + h * dh;
        Scalar maxv = -std::numeric_limits<Scalar>::infinity();
        for (int s = 0; s <= t; ++s) {
          const Scalar* ks = L.k.data() + static_cast<std::size_t>(s) * d + h * dh;
          Scalar dot = Scalar(0);
          for (int j = 0; j < dh; ++j) {
            dot += qt[j] * ks[j];
          }
          row[s] = dot * inv_sqrt_dh;
          maxv = std::max(maxv, row[s]);
        }
        Scalar total = Scalar(0);
        for (int s = 0; s <= t; ++s) {
          row[s] = std::exp(row[s] - maxv);
          total += row[s];
        }
        Scalar* prob =
            L.probs.data() + (static_cast<std::size_t>(h) * T + t) * T;
        for (int s = 0; s <= t; ++s) {
          prob[s] = row[s] / total;
        }
        Scalar* ct = L.ctx.data() + static_cast<std::size_t>(t) * d + h * dh;
        for (int s = 0; s <= t; ++s) {
          const Scalar* vs = L.v.data() + static_cast<std::size_t>(s) * d + h * dh;
          const Scalar w = prob[s];
          for (int j = 0; j < dh; ++j) {
            ct[j] += w * vs[j];
          }
        }
      }
    }

    std::vector<Scalar> attn_out(static_cast<std::size_t>(T) * d, Scalar(0));
    nn::linear_forward(L.ctx.data(), m.data(p + "attn.wo"), m.data(p + "attn.bo"),
                       attn_out.data(), T, d, d);
    L.after_attn.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    for (std::size_t i = 0; i < attn_out.size(); ++i) {
      L.after_attn[i] = x[i] + attn_out[i];
    }

    L.ln2_norm.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    L.ln2_rstd.assign(T, Scalar(0));
    L.ln2_out.assign(static_cast<std::size_t>(T) * d, Scalar(0));
    nn::layernorm_forward(L.after_attn.data(), m.data(p + "ln2.g"), m.data(p + "ln2.b"),
                          L.ln2_out.data(), L.ln2_norm.data(), L.ln2_rstd.data(), T, d);

    L.ffn_pre.assign(static_cast<std::size_t>(T) * f, Scalar(0));
    nn::linear_forward(L.ln2_out.data(), m.data(p + "ffn.w1"), m.data(p + "ffn.b1"),
                       L.ffn_pre.data(), T, d, f);
    L.ffn_act.assign(static_cast<std::size_t>(T) * f, Scalar(0));
    for (std::size_t i = 0; i < L.ffn_pre.size(); ++i) {
      L.ffn_act[i] = nn::gelu(L.ffn_pre[i]);
    }
    std::vector<Scalar> ffn_out(static_cast<std::size_t>(T) * d, Scalar(0));
    nn::linear_forward(L.ffn_act.data(), m.data(p + "ffn.w2"), m.data(p + "ffn.b2"),
                       ffn_out.data(), T, f, d);
    for (std::size_t i = 0; i < ffn_out.size(); ++i) {
      x[i] = L.after_attn[i] + ffn_out[i];
    }
  }

  cache.final_in = x;
  cache.lnf_norm.assign(static_cast<std::size_t>(T) * d, Scalar(0));
  cache.lnf_rstd.assign(T, Scalar(0));
  cache.lnf_out.assign(static_cast<std::size_t>(T) * d, Scalar(0));
  nn::layernorm_forward(x.data(), m.data("lnf.g"), m.data("lnf.b"), cache.lnf_out.data(),
                        cache.lnf_norm.data(), cache.lnf_rstd.data(), T, d);

  cache.logits.assign(static_cast<std::size_t>(T) * V, Scalar(0));
  if (last_only) {
    nn::linear_forward(cache.lnf_out.data() + static_cast<std::size_t>(T - 1) * d,
                       m.data("wout"), m.data("bout"),
                       cache.logits.data() + static_cast<std::size_t>(T - 1) * V, 1, d, V);
  } else {
    nn::linear_forward(cache.lnf_out.data(), m.data("wout"), m.data("bout"),
                       cache.logits.data(), T, d, V);
  }
}

// Backpropagates an arbitrary dL/dlogits through the network, accumulating into
// a flat gradient array aligned with the model's parameter storage.
template <typename Scalar>
void gen_backward(const GenModelT<Scalar>& m, const std::vector<int>& tokens,
                  const ForwardCache<Scalar>& cache, const std::vector<Scalar>& dlogits,
                  std::vector<Scalar>& grad) {
  const int T = cache.T;
  const int d = m.cfg.d_model;
  const int f = m.cfg.d_ff();
  const int V = m.cfg.vocab_size;
  const int heads = m.cfg.n_heads;
  const int dh = m.cfg.head_dim();
  require(!cache.last_only, ErrorKind::contract,
          "gen_backward: cannot backpropagate a last_only forward");
  require(dlogits.size() == static_cast<std::size_t>(T) * V, ErrorKind::contract,
          "gen_backward: dlogits shape mismatch");
  require(grad.size() == m.param_count(), ErrorKind::contract,
          "gen_backward: gradient buffer size mismatch");
  const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  auto g = [&](const std::string& name) { return grad.data() + m.spec(name).offset; };

  // Output projection.
  std::vector<Scalar> d_lnf_out(static_cast<std::size_t>(T) * d, Scalar(0));
  nn::linear_backward(cache.lnf_out.data(), m.data("wout"), dlogits.data(),
                      d_lnf_out.data(), g("wout"), g("bout"), T, d, V);

  // Final layer norm.
  std::vector<Scalar> dx(static_cast<std::size_t>(T) * d, Scalar(0));
  nn::layernorm_backward(cache.lnf_norm.data(), cache.lnf_rstd.data(), m.data("lnf.g"),
                         d_lnf_out.data(), dx.data(), g("lnf.g"), g("lnf.b"), T, d);

  std::vector<Scalar> d_ffn_act(static_cast<std::size_t>(T) * f);
  std::vector<Scalar> d_ffn_pre(static_cast<std::size_t>(T) * f);
  std::vector<Scalar> d_ln2_out(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> d_after_attn(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> d_attn_out(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> d_ctx(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> dq(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> dk(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> dv(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> d_ln1_out(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> d_input(static_cast<std::size_t>(T) * d);
  std::vector<Scalar> dprob_row;

  for (int l = m.cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = cache.layers[l];
    const std::string p = "blk" + std::to_string(l) + ".";

    // FFN half: x_out = after_attn + W2·gelu(W1·ln2(after_attn)).
    std::fill(d_ffn_act.begin(), d_ffn_act.end(), Scalar(0));
    nn::linear_backward(L.ffn_act.data(), m.data(p + "ffn.w2"), dx.data(),
                        d_ffn_act.data(), g(p + "ffn.w2"), g(p + "ffn.b2"), T, f, d);
    for (std::size_t i = 0; i < d_ffn_pre.size(); ++i) {
      d_ffn_pre[i] = d_ffn_act[i] * nn::gelu_grad(L.ffn_pre[i]);
    }
    std::fill(d_ln2_out.begin(), d_ln2_out.end(), Scalar(0));
    nn::linear_backward(L.ln2_out.data(), m.data(p + "ffn.w1"), d_ffn_pre.data(),
                        d_ln2_out.data(), g(p + "ffn.w1"), g(p + "ffn.b1"), T, d, f);
    std::fill(d_after_attn.begin(), d_after_attn.end(), Scalar(0));
    nn::layernorm_backward(L.ln2_norm.data(), L.ln2_rstd.data(), m.data(p + "ln2.g"),
                           d_ln2_out.data(), d_after_attn.data(), g(p + "ln2.g"),
                           g(p + "ln2.b"), T, d);
    for (std::size_t i = 0; i < d_after_attn.size(); ++i) {
      d_after_attn[i] += dx[i];  // residual branch
    }

    // Attention half: after_attn = input + Wo·ctx.
    std::fill(d_ctx.begin(), d_ctx.end(), Scalar(0));
    nn::linear_backward(L.ctx.data(), m.data(p + "attn.wo"), d_after_attn.data(),
                        d_ctx.data(), g(p + "attn.wo"), g(p + "attn.bo"), T, d, d);

    std::fill(dq.begin(), dq.end(), Scalar(0));
    std::fill(dk.begin(), dk.end(), Scalar(0));
    std::fill(dv.begin(), dv.end(), Scalar(0));
    dprob_row.assign(T, Scalar(0));
    for (int h = 0; h < heads; ++h) {
      for (int t = 0; t < T; ++t) {
        const Scalar* prob =
            L.probs.data() + (static_cast<std::size_t>(h) * T + t) * T;
        const Scalar* dct = d_ctx.data() + static_cast<std::size_t>(t) * d + h * dh;
        // dP[t,s] and dV accumulation.
        Scalar inner = Scalar(0);
        for (int s = 0; s <= t; ++s) {
          const Scalar* vs = L.v.data() + static_cast<std::size_t>(s) * d + h * dh;
          Scalar dp = Scalar(0);
          for (int j = 0; j < dh; ++j) {
            dp += dct[j] * vs[j];
          }
          dprob_row[s] = dp;
          inner += prob[s] * dp;
          Scalar* dvs = dv.data() + static_cast<std::size_t>(s) * d + h * dh;
          const Scalar w = prob[s];
          for (int j = 0; j < dh; ++j) {
            dvs[j] += w * dct[j];
          }
        }
        // Softmax backward, then scores -> q, k.
        const Scalar* qt = L.q.data() + static_cast<std::size_t>(t) * d + h * dh;
        Scalar* dqt = dq.data() + static_cast<std::size_t>(t) * d + h * dh;
        for (int s = 0; s <= t; ++s) {
          const Scalar dscore = prob[s] * (dprob_row[s] - inner) * inv_sqrt_dh;
          const Scalar* ks = L.k.data() + static_cast<std::size_t>(s) * d + h * dh;
          Scalar* dks = dk.data() + static_cast<std::size_t>(s) * d + h * dh;
          for (int j = 0; j < dh; ++j) {
            dqt[j] += dscore * ks[j];
            dks[j] += dscore * qt[j];
          }
        }
      }
    }

    std::fill(d_ln1_out.begin(), d_ln1_out.end(), Scalar(0));
    nn::linear_backward(L.ln1_out.data(), m.data(p + "attn.wq"), dq.data(),
                        d_ln1_out.data(), g(p + "attn.wq"), g(p + "attn.bq"), T, d, d);
    {
      std::vector<Scalar> tmp(static_cast<std::size_t>(T) * d, Scalar(0));
      nn::linear_backward(L.ln1_out.data(), m.data(p + "attn.wk"), dk.data(), tmp.data(),
                          g(p + "attn.wk"), g(p + "attn.bk"), T, d, d);
      for (std::size_t i = 0; i < tmp.size(); ++i) {
        d_ln1_out[i] += tmp[i];
      }
      std::fill(tmp.begin(), tmp.end(), Scalar(0));
      nn::linear_backward(L.ln1_out.data(), m.data(p + "attn.wv"), dv.data(), tmp.data(),
                          g(p + "attn.wv"), g(p + "attn.bv"), T, d, d);
      for (std::size_t i = 0; i < tmp.size(); ++i) {
        d_ln1_out[i] += tmp[i];
      }
    }
    std::fill(d_input.begin(), d_input.end(), Scalar(0));
    nn::layernorm_backward(L.ln1_norm.data(), L.ln1_rstd.data(), m.data(p + "ln1.g"),
                           d_ln1_out.data(), d_input.data(), g(p + "ln1.g"),
                           g(p + "ln1.b"), T, d);
    for (std::size_t i = 0; i < d_input.size(); ++i) {
      dx[i] = d_input[i] + d_after_attn[i];  // residual branch
    }
  }

  // Embeddings.
  Scalar* d_tok = g("tok_emb");
  Scalar* d_pos = g("pos_emb");
  for (int t = 0; t < T; ++t) {
    const Scalar* dxt = dx.data() + static_cast<std::size_t>(t) * d;
    Scalar* e = d_tok + static_cast<std::size_t>(tokens[t]) * d;
    Scalar* pp = d_pos + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      e[i] += dxt[i];
      pp[i] += dxt[i];
    }
  }
}

// Log-softmax of one logits row, computed in double for downstream scoring.
template <typename Scalar>
std::vector<double> log_softmax_row(const Scalar* row, int n) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    maxv = std::max(maxv, static_cast<double>(row[i]));
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += std::exp(static_cast<double>(row[i]) - maxv);
  }
  const double log_z = maxv + std::log(total);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = static_cast<double>(row[i]) - log_z;
  }
  return out;
}

// Next-token log-distribution after the full prefix.
template <typename Scalar>
std::vector<double> next_token_log_probs(const GenModelT<Scalar>& m,
                                         const std::vector<int>& tokens) {
  ForwardCache<Scalar> cache;
  gen_forward(m, tokens, cache, /*last_only=*/true);
  const int V = m.cfg.vocab_size;
  return log_softmax_row(cache.logits.data() + static_cast<std::size_t>(cache.T - 1) * V,
                         V);
}

inline void validate_token_sequence(const TokenSequence& seq, int context) {
  require(!seq.tokens.empty() && seq.tokens.front() == Vocab::kBos, ErrorKind::contract,
          "token sequence must begin with BOS");
  require(seq.boundary >= 1 && seq.boundary < seq.tokens.size(), ErrorKind::contract,
          "token sequence needs at least one target token after the boundary");
  require(static_cast<int>(seq.tokens.size()) <= context, ErrorKind::contract,
          "token sequence length " + std::to_string(seq.tokens.size()) +
              " exceeds context " + std::to_string(context));
}

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  std::vector<Scalar> grad;
};

// Mean over the batch of the summed negative log-likelihood of each sequence's
// target span. Per-example gradients are reduced in example order, so the
// result does not depend on the thread count.
template <typename Scalar>
LossResult<Scalar> sft_loss(const GenModelT<Scalar>& m,
                            const std::vector<TokenSequence>& batch, int threads = 1) {
  require(!batch.empty(), ErrorKind::contract, "sft_loss: empty batch");
  const int V = m.cfg.vocab_size;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::vector<Scalar>> grads(batch.size());

  parallel_for(batch.size(), threads, [&](std::size_t bi) {
    const TokenSequence& seq = batch[bi];
    validate_token_sequence(seq, m.cfg.context);
    ForwardCache<Scalar> cache;
    gen_forward(m, seq.tokens, cache);
    const int T = cache.T;

    std::vector<Scalar> dlogits(static_cast<std::size_t>(T) * V, Scalar(0));
    double loss = 0.0;
    // Position t-1 predicts token t; targets start at the boundary.
    for (std::size_t t = seq.boundary; t < seq.tokens.size(); ++t) {
      const int ctx_pos = static_cast<int>(t) - 1;
      const Scalar* row = cache.logits.data() + static_cast<std::size_t>(ctx_pos) * V;
      const auto lp = log_softmax_row(row, V);
      loss -= lp[seq.tokens[t]];
      Scalar* drow = dlogits.data() + static_cast<std::size_t>(ctx_pos) * V;
      for (int i = 0; i < V; ++i) {
        drow[i] += static_cast<Scalar>(std::exp(lp[i]) * inv_b);
      }
      drow[seq.tokens[t]] -= static_cast<Scalar>(inv_b);
    }
    losses[bi] = loss;
    grads[bi].assign(m.param_count(), Scalar(0));
    gen_backward(m, seq.tokens, cache, dlogits, grads[bi]);
  });

  LossResult<Scalar> result;
  result.grad.assign(m.param_count(), Scalar(0));
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    result.loss += losses[bi] * inv_b;
    for (std::size_t i = 0; i < result.grad.size(); ++i) {
      result.grad[i] += grads[bi][i];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  long long t = 0;
};

template <typename Scalar>
void sgd_update(GenModelT<Scalar>& model, const std::vector<Scalar>& grad, double lr) {
  require(grad.size() == model.param_count(), ErrorKind::contract,
          "sgd_update: gradient size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    model.params[i] -= static_cast<Scalar>(lr * static_cast<double>(grad[i]));
  }
}

template <typename Scalar>
void adam_update(GenModelT<Scalar>& model, const std::vector<Scalar>& grad,
                 AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
  require(grad.size() == model.param_count(), ErrorKind::contract,
          "adam_update: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(grad.size(), 0.0);
    state.v.assign(grad.size(), 0.0);
  }
  require(state.m.size() == grad.size(), ErrorKind::contract,
          "adam_update: optimizer state size mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double gi = static_cast<double>(grad[i]);
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gi;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    model.params[i] -= static_cast<Scalar>(lr * mhat / (std::sqrt(vhat) + eps));
  }
}

// ---------------------------------------------------------------------------
// SFT training
// ---------------------------------------------------------------------------

struct SftCfg {
  int epochs = 3;
  int batch_size = 8;
  double lr = 3e-3;
  std::string optimizer = "adam";  // or "sgd"
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int n_hist = 20;
  int threads = 1;
};

inline void validate_sft_cfg(const SftCfg& cfg) {
  require(cfg.lr >= 0.0, ErrorKind::config, "SftCfg: lr must be non-negative");
  require(cfg.epochs >= 1, ErrorKind::config, "SftCfg: epochs must be at least 1");
  require(cfg.batch_size >= 1, ErrorKind::config, "SftCfg: batch_size must be positive");
  require(cfg.optimizer == "adam" || cfg.optimizer == "sgd", ErrorKind::config,
          "SftCfg: optimizer must be adam or sgd");
  require(cfg.n_hist >= 1, ErrorKind::config, "SftCfg: n_hist must be positive");
}

struct TrainCurvePoint {
  long long step = 0;
  double loss = 0.0;
};

template <typename Scalar>
struct SftResult {
  GenModelT<Scalar> model;
  std::vector<TrainCurvePoint> curve;
  std::vector<double> epoch_mean;
};

template <typename Scalar>
SftResult<Scalar> sft_train_sequences(GenModelT<Scalar> model,
                                      const std::vector<TokenSequence>& sequences,
                                      const SftCfg& cfg) {
  validate_sft_cfg(cfg);
  require(!sequences.empty(), ErrorKind::contract, "sft_train: no training sequences");

  SftResult<Scalar> result;
  AdamState adam;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.next_below(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<TokenSequence> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(sequences[order[i]]);
      }
      auto res = sft_loss(model, batch, cfg.threads);
      require(std::isfinite(res.loss), ErrorKind::training,
              "sft_train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                  std::to_string(epoch) + ")");
      if (cfg.optimizer == "adam") {
        adam_update(model, res.grad, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      } else {
        sgd_update(model, res.grad, cfg.lr);
      }
      ++step;
      result.curve.push_back({step, res.loss});
      epoch_loss += res.loss;
      ++epoch_batches;
    }
    result.epoch_mean.push_back(epoch_loss / static_cast<double>(epoch_batches));
  }
  result.model = std::move(model);
  return result;
}

template <typename Scalar>
SftResult<Scalar> sft_train(GenModelT<Scalar> model, const SplitDataset& data,
                            const SidTable& table, const Vocab& vocab, const SftCfg& cfg) {
  validate_sft_cfg(cfg);
  std::vector<TokenSequence> sequences;
  sequences.reserve(data.train.size());
  for (const auto& ex : data.train) {
    sequences.push_back(
        build_training_sequence(table, vocab, ex.history, ex.target, cfg.n_hist));
    // Rejecting up front beats a mid-training length error.
    require(static_cast<int>(sequences.back().tokens.size()) <= model.cfg.context,
            ErrorKind::config,
            "sft_train: user " + ex.user + " produces " +
                std::to_string(sequences.back().tokens.size()) +
                " tokens at n_hist " + std::to_string(cfg.n_hist) +
                ", which exceeds the model context " +
                std::to_string(model.cfg.context) + "; lower n_hist or raise context");
  }
  return sft_train_sequences(std::move(model), sequences, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, JSON header, raw little-endian float32 payload.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr const char* kCheckpointVersion = "sidrec.checkpoint.v1";

inline void save_checkpoint(const std::filesystem::path& path, const GenModel& model,
                            const Vocab& vocab, long long step) {
  Json header;
  header["version"] = kCheckpointVersion;
  header["config"] = gen_config_to_json(model.cfg);
  header["vocab"] = vocab_to_json(vocab);
  header["step"] = step;
  header["seed"] = model.seed;
  header["param_count"] = model.param_count();
  Json manifest = Json::array();
  for (const auto& t : model.manifest) {
    manifest.push_back(Json{{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  header["manifest"] = manifest;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "save_checkpoint: cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(model.params.size() * sizeof(float)));
  require(out.good(), ErrorKind::io, "save_checkpoint: write failed for " + path.string());
}

struct LoadedCheckpoint {
  GenModel model;
  Vocab vocab;
  long long step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
          ErrorKind::corrupt_input, "load_checkpoint: bad magic in " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  require(in.good() && header_len > 0 && header_len < (1u << 26), ErrorKind::corrupt_input,
          "load_checkpoint: implausible header length");
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  require(in.good(), ErrorKind::corrupt_input, "load_checkpoint: truncated header");

  Json header;
  try {
    header = Json::parse(header_str);
  } catch (const Json::exception& e) {
    fail(ErrorKind::corrupt_input, std::string("load_checkpoint: bad header JSON: ") + e.what());
  }
  try {
    require(header.at("version").get<std::string>() == kCheckpointVersion,
            ErrorKind::corrupt_input, "load_checkpoint: unsupported version");
    LoadedCheckpoint loaded;
    loaded.model = GenModel(gen_config_from_json(header.at("config")));
    loaded.vocab = vocab_from_json(header.at("vocab"));
    loaded.step = header.at("step").get<long long>();
    loaded.model.seed = header.at("seed").get<std::uint64_t>();
    require(header.at("param_count").get<std::size_t>() == loaded.model.param_count(),
            ErrorKind::corrupt_input, "load_checkpoint: parameter count mismatch");
    const Json& manifest = header.at("manifest");
    require(manifest.size() == loaded.model.manifest.size(), ErrorKind::corrupt_input,
            "load_checkpoint: manifest length mismatch");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& t = loaded.model.manifest[i];
      require(manifest[i].at("name").get<std::string>() == t.name &&
                  manifest[i].at("shape").get<std::vector<int>>() == t.shape &&
                  manifest[i].at("offset").get<std::size_t>() == t.offset,
              ErrorKind::corrupt_input,
              "load_checkpoint: manifest entry mismatch at index " + std::to_string(i));
    }
    in.read(reinterpret_cast<char*>(loaded.model.params.data()),
            static_cast<std::streamsize>(loaded.model.params.size() * sizeof(float)));
    require(in.gcount() == static_cast<std::streamsize>(loaded.model.params.size() *
                                                        sizeof(float)),
            ErrorKind::corrupt_input, "load_checkpoint: truncated parameter payload");
    return loaded;
  } catch (const Json::exception& e) {
    fail(ErrorKind::corrupt_input, std::string("load_checkpoint: malformed header: ") + e.what());
  }
}

}  // namespace sidrec

#endif  // SIDREC_GENMODEL_HPP
