#include "borrowdet/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "borrowdet/common.hpp"
#include "borrowdet/phon.hpp"

namespace borrowdet::encoder {

namespace {

constexpr double kLnEps = 1e-5;

// Per-position layer norm over the hidden axis; caches what backward needs.
template <typename S>
Matrix<S> ln_forward(const Matrix<S>& x, const Vector<S>& gain, const Vector<S>& bias,
                     LnCache<S>& cache) {
  const Eigen::Index rows = x.rows(), dim = x.cols();
  cache.xhat.resize(rows, dim);
  cache.inv_std.resize(rows);
  Matrix<S> y(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mu = x.row(r).mean();
    const S var = (x.row(r).array() - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + S(kLnEps));
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = ((x.row(r).array() - mu) * inv).matrix();
    y.row(r) = (cache.xhat.row(r).array() * gain.transpose().array() +
                bias.transpose().array())
                   .matrix();
  }
  return y;
}

template <typename S>
Matrix<S> ln_backward(const LnCache<S>& cache, const Matrix<S>& gy, const Vector<S>& gain,
                      Vector<S>& dgain, Vector<S>& dbias) {
  const Eigen::Index rows = gy.rows(), dim = gy.cols();
  dgain += (gy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  dbias += gy.colwise().sum().transpose();
  Matrix<S> gx(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto dxhat = (gy.row(r).array() * gain.transpose().array()).eval();
    const S m1 = dxhat.mean();
    const S m2 = (dxhat * cache.xhat.row(r).array()).mean();
    gx.row(r) =
        (cache.inv_std(r) * (dxhat - m1 - cache.xhat.row(r).array() * m2)).matrix();
  }
  return gx;
}

// Rotation tables for rotary attention: angle(t, k) = t * 10000^(-2k/dh).
template <typename S>
void rotary_tables(Eigen::Index max_len, int head_dim, Matrix<S>& cos_t, Matrix<S>& sin_t) {
  const int pairs = head_dim / 2;
  cos_t.resize(max_len, pairs);
  sin_t.resize(max_len, pairs);
  for (Eigen::Index t = 0; t < max_len; ++t) {
    for (int k = 0; k < pairs; ++k) {
      const double theta = std::pow(10000.0, -2.0 * k / head_dim);
      const double angle = static_cast<double>(t) * theta;
      cos_t(t, k) = static_cast<S>(std::cos(angle));
      sin_t(t, k) = static_cast<S>(std::sin(angle));
    }
  }
}

// In-place rotation of interleaved pairs within each head; `invert` applies
// the transpose (inverse) rotation, which is what the backward pass needs.
template <typename S>
void apply_rotary(Matrix<S>& m, Eigen::Index n_seq, Eigen::Index max_len, int n_heads,
                  int head_dim, const Matrix<S>& cos_t, const Matrix<S>& sin_t,
                  bool invert) {
  const int pairs = head_dim / 2;
  for (Eigen::Index r = 0; r < n_seq * max_len; ++r) {
    const Eigen::Index t = r % max_len;
    for (int h = 0; h < n_heads; ++h) {
      for (int k = 0; k < pairs; ++k) {
        const S c = cos_t(t, k);
        const S s = invert ? -sin_t(t, k) : sin_t(t, k);
        const Eigen::Index i = h * head_dim + 2 * k;
        const S a = m(r, i);
        const S b = m(r, i + 1);
        m(r, i) = a * c - b * s;
        m(r, i + 1) = a * s + b * c;
      }
    }
  }
}

template <typename S>
void fill_uniform(S* data, Eigen::Index n, double scale, Rng& rng) {
  for (Eigen::Index i = 0; i < n; ++i) {
    data[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * scale);
  }
}

template <typename P, typename V>
void collect_arrays(P& p, std::vector<V>& out) {
  const auto add_m = [&](const std::string& name, auto& m) {
    out.push_back(V{name, m.data(), m.rows(), m.cols()});
  };
  add_m("embed.weight", p.embed_w);
  add_m("embed.bias", p.embed_b);
  add_m("embed_ln.gain", p.embed_ln_g);
  add_m("embed_ln.bias", p.embed_ln_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    add_m(prefix + "ln1.gain", lp.ln1_g);
    add_m(prefix + "ln1.bias", lp.ln1_b);
    add_m(prefix + "attn.w_q", lp.w_q);
    add_m(prefix + "attn.b_q", lp.b_q);
    add_m(prefix + "attn.w_k", lp.w_k);
    add_m(prefix + "attn.b_k", lp.b_k);
    add_m(prefix + "attn.w_v", lp.w_v);
    add_m(prefix + "attn.b_v", lp.b_v);
    add_m(prefix + "attn.w_o", lp.w_o);
    add_m(prefix + "attn.b_o", lp.b_o);
    add_m(prefix + "ln2.gain", lp.ln2_g);
    add_m(prefix + "ln2.bias", lp.ln2_b);
    add_m(prefix + "ff.w_1", lp.w_ff1);
    add_m(prefix + "ff.b_1", lp.b_ff1);
    add_m(prefix + "ff.w_2", lp.w_ff2);
    add_m(prefix + "ff.b_2", lp.b_ff2);
  }
  if (p.config.use_projection_head) {
    add_m("proj.weight", p.proj_w);
    add_m("proj.bias", p.proj_b);
  }
}

}  // namespace

std::string encoding_mode_name(EncodingMode mode) {
  return mode == EncodingMode::kFeatureVectors ? "feature_vectors" : "one_hot_ipa";
}

EncodingMode encoding_mode_from_name(const std::string& name) {
  if (name == "feature_vectors") return EncodingMode::kFeatureVectors;
  if (name == "one_hot_ipa") return EncodingMode::kOneHotIpa;
  throw ValidationError("unknown encoding mode '" + name +
                        "' (expected feature_vectors or one_hot_ipa)");
}

void EncoderConfig::validate() const {
  if (input_dim <= 0) throw ValidationError("encoder config: input_dim must be positive");
  if (hidden_dim <= 0) throw ValidationError("encoder config: hidden_dim must be positive");
  if (n_layers < 1) throw ValidationError("encoder config: n_layers must be at least 1");
  if (n_heads < 1) throw ValidationError("encoder config: n_heads must be at least 1");
  if (ff_dim <= 0) throw ValidationError("encoder config: ff_dim must be positive");
  if (hidden_dim % n_heads != 0) {
    throw ValidationError("encoder config: hidden_dim must be divisible by n_heads");
  }
  if ((hidden_dim / n_heads) % 2 != 0) {
    throw ValidationError("encoder config: head dimension must be even (rotary pairs)");
  }
  if (feature_dropout < 0.0 || feature_dropout >= 1.0 || attention_dropout < 0.0 ||
      attention_dropout >= 1.0) {
    throw ValidationError("encoder config: dropout probabilities must lie in [0, 1)");
  }
}

std::size_t param_count(const EncoderConfig& config) {
  config.validate();
  const std::size_t in = config.input_dim;
  const std::size_t h = config.hidden_dim;
  const std::size_t ff = config.ff_dim;
  std::size_t n = in * h + h;  // embedding
  n += 2 * h;                  // post-embed layer norm
  std::size_t per_layer = 2 * h;          // ln1
  per_layer += 4 * (h * h + h);           // attention projections
  per_layer += 2 * h;                     // ln2
  per_layer += h * ff + ff + ff * h + h;  // feed-forward
  n += per_layer * static_cast<std::size_t>(config.n_layers);
  if (config.use_projection_head) n += h * h + h;
  return n;
}

template <typename S>
std::vector<ArrayView<S>> Params<S>::arrays() {
  std::vector<ArrayView<S>> out;
  collect_arrays(*this, out);
  return out;
}

template <typename S>
std::vector<ArrayView<const S>> Params<S>::arrays() const {
  std::vector<ArrayView<const S>> out;
  collect_arrays(*this, out);
  return out;
}

template <typename S>
std::size_t Params<S>::count() const {
  std::size_t n = 0;
  for (const auto& a : arrays()) n += static_cast<std::size_t>(a.size());
  return n;
}

template <typename S>
void Params<S>::set_zero() {
  for (auto& a : arrays()) std::fill(a.data, a.data + a.size(), S(0));
}

template <typename S>
std::uint64_t Params<S>::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& a : arrays()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.data);
    const std::size_t n = static_cast<std::size_t>(a.size()) * sizeof(S);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

template <typename S>
template <typename T>
Params<T> Params<S>::cast() const {
  Params<T> out = make_zero_params<T>(config);
  const auto src = arrays();
  auto dst = out.arrays();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (Eigen::Index j = 0; j < src[i].size(); ++j) {
      dst[i].data[j] = static_cast<T>(src[i].data[j]);
    }
  }
  return out;
}

template <typename S>
Params<S> make_zero_params(const EncoderConfig& config) {
  config.validate();
  const Eigen::Index h = config.hidden_dim;
  const Eigen::Index ff = config.ff_dim;
  Params<S> p;
  p.config = config;
  p.embed_w = Matrix<S>::Zero(config.input_dim, h);
  p.embed_b = Vector<S>::Zero(h);
  p.embed_ln_g = Vector<S>::Zero(h);
  p.embed_ln_b = Vector<S>::Zero(h);
  p.layers.resize(config.n_layers);
  for (auto& lp : p.layers) {
    lp.ln1_g = Vector<S>::Zero(h);
    lp.ln1_b = Vector<S>::Zero(h);
    lp.w_q = Matrix<S>::Zero(h, h);
    lp.w_k = Matrix<S>::Zero(h, h);
    lp.w_v = Matrix<S>::Zero(h, h);
    lp.w_o = Matrix<S>::Zero(h, h);
    lp.b_q = Vector<S>::Zero(h);
    lp.b_k = Vector<S>::Zero(h);
    lp.b_v = Vector<S>::Zero(h);
    lp.b_o = Vector<S>::Zero(h);
    lp.ln2_g = Vector<S>::Zero(h);
    lp.ln2_b = Vector<S>::Zero(h);
    lp.w_ff1 = Matrix<S>::Zero(h, ff);
    lp.b_ff1 = Vector<S>::Zero(ff);
    lp.w_ff2 = Matrix<S>::Zero(ff, h);
    lp.b_ff2 = Vector<S>::Zero(h);
  }
  if (config.use_projection_head) {
    p.proj_w = Matrix<S>::Zero(h, h);
    p.proj_b = Vector<S>::Zero(h);
  }
  return p;
}

template <typename S>
Params<S> init_params(const EncoderConfig& config, std::uint64_t seed) {
  Params<S> p = make_zero_params<S>(config);
  Rng rng(seed);
  const auto uniform_in = [&](Matrix<S>& w, Eigen::Index fan_in) {
    fill_uniform(w.data(), w.size(), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  };
  uniform_in(p.embed_w, config.input_dim);
  p.embed_ln_g.setOnes();
  for (auto& lp : p.layers) {
    lp.ln1_g.setOnes();
    lp.ln2_g.setOnes();
    uniform_in(lp.w_q, config.hidden_dim);
    uniform_in(lp.w_k, config.hidden_dim);
    uniform_in(lp.w_v, config.hidden_dim);
    uniform_in(lp.w_o, config.hidden_dim);
    uniform_in(lp.w_ff1, config.hidden_dim);
    uniform_in(lp.w_ff2, config.ff_dim);
  }
  if (config.use_projection_head) uniform_in(p.proj_w, config.hidden_dim);
  return p;
}

template <typename S>
Matrix<S> sinusoidal_pe(Eigen::Index max_len, Eigen::Index dim) {
  if (max_len < 0 || dim <= 0 || dim % 2 != 0) {
    throw ValidationError("sinusoidal_pe: dimension must be positive and even");
  }
  Matrix<S> pe(max_len, dim);
  for (Eigen::Index pos = 0; pos < max_len; ++pos) {
    for (Eigen::Index k = 0; 2 * k < dim; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                                 static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, 2 * k) = static_cast<S>(std::sin(angle));
      pe(pos, 2 * k + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

int InputEncoder::input_dim() const {
  return mode == EncodingMode::kFeatureVectors ? phon::kFeatureDim
                                               : static_cast<int>(inventory.size());
}

InputEncoder InputEncoder::feature_vectors() { return InputEncoder{}; }

InputEncoder InputEncoder::one_hot(std::vector<std::string> symbols) {
  if (symbols.empty()) throw ValidationError("one-hot input encoder: empty inventory");
  InputEncoder enc;
  enc.mode = EncodingMode::kOneHotIpa;
  std::sort(symbols.begin(), symbols.end());
  symbols.erase(std::unique(symbols.begin(), symbols.end()), symbols.end());
  enc.inventory = std::move(symbols);
  for (std::size_t i = 0; i < enc.inventory.size(); ++i) {
    enc.index.emplace(enc.inventory[i], static_cast<int>(i));
  }
  return enc;
}

InputEncoder InputEncoder::from_wordlist(const corpus::Wordlist& wordlist, EncodingMode mode) {
  if (mode == EncodingMode::kFeatureVectors) return feature_vectors();
  std::set<std::string> symbols;
  for (const auto& form : wordlist.forms) {
    for (const auto& seg : form.segments) symbols.insert(seg.symbol);
  }
  return one_hot(std::vector<std::string>(symbols.begin(), symbols.end()));
}

template <typename S>
Matrix<S> InputEncoder::encode_segments(const std::vector<phon::Segment>& segments,
                                        const std::string& context) const {
  const auto len = static_cast<Eigen::Index>(segments.size());
  if (len == 0) throw ValidationError("cannot encode '" + context + "': no segments");
  Matrix<S> rows = Matrix<S>::Zero(len, input_dim());
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto& seg = segments[static_cast<std::size_t>(t)];
    if (mode == EncodingMode::kFeatureVectors) {
      for (int d = 0; d < phon::kFeatureDim; ++d) {
        rows(t, d) = static_cast<S>(seg.features[static_cast<std::size_t>(d)]);
      }
    } else {
      const auto it = index.find(seg.symbol);
      if (it == index.end()) {
        throw ValidationError("symbol '" + seg.symbol + "' in '" + context +
                              "' is not in the one-hot inventory");
      }
      rows(t, it->second) = S(1);
    }
  }
  return rows;
}

template <typename S>
Matrix<S> InputEncoder::encode(const corpus::WordForm& form) const {
  return encode_segments<S>(form.segments, "form '" + form.id + "'");
}

template <typename S>
void Batch<S>::validate(const EncoderConfig& config) const {
  if (size <= 0 || max_len <= 0) throw ValidationError("batch: empty");
  const Eigen::Index rows = size * max_len;
  if (inputs.rows() != rows || inputs.cols() != config.input_dim) {
    throw ValidationError("batch: input shape does not match the config");
  }
  if (static_cast<Eigen::Index>(mask.size()) != rows ||
      static_cast<Eigen::Index>(lengths.size()) != size ||
      static_cast<Eigen::Index>(concepts.size()) != size ||
      static_cast<Eigen::Index>(form_ids.size()) != size) {
    throw ValidationError("batch: field sizes disagree");
  }
  if (!noise_flags.empty() && static_cast<Eigen::Index>(noise_flags.size()) != size) {
    throw ValidationError("batch: noise flags must cover every sequence");
  }
  if (noise_sigma < 0.0) throw ValidationError("batch: negative noise sigma");
  for (Eigen::Index b = 0; b < size; ++b) {
    int count = 0;
    for (Eigen::Index t = 0; t < max_len; ++t) {
      const Eigen::Index r = b * max_len + t;
      if (mask[static_cast<std::size_t>(r)]) {
        ++count;
      } else if (!inputs.row(r).isZero(S(0))) {
        throw ValidationError("batch: padded position holds nonzero input");
      }
    }
    if (count == 0) throw ValidationError("batch: sequence with zero valid positions");
    if (count != lengths[static_cast<std::size_t>(b)]) {
      throw ValidationError("batch: mask count disagrees with stored length");
    }
  }
}

template <typename S>
Batch<S> make_batch(const std::vector<const corpus::WordForm*>& forms,
                    const InputEncoder& input_encoder) {
  if (forms.empty()) throw ValidationError("make_batch: no forms");
  Batch<S> batch;
  batch.size = static_cast<Eigen::Index>(forms.size());
  std::vector<Matrix<S>> encoded;
  encoded.reserve(forms.size());
  for (const auto* form : forms) {
    encoded.push_back(input_encoder.template encode<S>(*form));
    batch.max_len = std::max(batch.max_len, encoded.back().rows());
  }
  batch.inputs = Matrix<S>::Zero(batch.size * batch.max_len, input_encoder.input_dim());
  batch.mask.assign(static_cast<std::size_t>(batch.size * batch.max_len), 0);
  for (Eigen::Index b = 0; b < batch.size; ++b) {
    const auto& rows = encoded[static_cast<std::size_t>(b)];
    batch.inputs.middleRows(b * batch.max_len, rows.rows()) = rows;
    for (Eigen::Index t = 0; t < rows.rows(); ++t) {
      batch.mask[static_cast<std::size_t>(b * batch.max_len + t)] = 1;
    }
    batch.lengths.push_back(static_cast<int>(rows.rows()));
    batch.concepts.push_back(forms[static_cast<std::size_t>(b)]->concept_id);
    batch.form_ids.push_back(forms[static_cast<std::size_t>(b)]->id);
  }
  return batch;
}

template <typename S>
Tape<S> forward(const Params<S>& params, const Batch<S>& batch, Mode mode, Rng& rng,
                const Tape<S>* replay) {
  const EncoderConfig& cfg = params.config;
  batch.validate(cfg);
  const Eigen::Index n_seq = batch.size;
  const Eigen::Index max_len = batch.max_len;
  const Eigen::Index rows = n_seq * max_len;
  const Eigen::Index hidden = cfg.hidden_dim;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const bool train = mode == Mode::kTrain;
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));

  Tape<S> tape;
  tape.mode = mode;
  tape.batch = batch;
  tape.params_hash = params.content_hash();

  Matrix<S> e = batch.inputs * params.embed_w;
  e.rowwise() += params.embed_b.transpose();
  Matrix<S> x = ln_forward(e, params.embed_ln_g, params.embed_ln_b, tape.ln0);

  if (train && cfg.feature_dropout > 0.0) {
    if (replay) {
      if (replay->feat_keep.rows() != rows || replay->feat_keep.cols() != hidden) {
        throw std::logic_error("forward: replay feature-dropout mask shape mismatch");
      }
      tape.feat_keep = replay->feat_keep;
    } else {
      tape.feat_keep.resize(rows, hidden);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < hidden; ++c) {
          tape.feat_keep(r, c) = rng.uniform() >= cfg.feature_dropout ? S(1) : S(0);
        }
      }
    }
    x.array() *= tape.feat_keep.array() / S(1.0 - cfg.feature_dropout);
  }

  const bool any_noise =
      train && batch.noise_sigma > 0.0 &&
      std::any_of(batch.noise_flags.begin(), batch.noise_flags.end(),
                  [](std::uint8_t f) { return f != 0; });
  if (any_noise) {
    if (replay) {
      if (replay->noise.rows() != rows || replay->noise.cols() != hidden) {
        throw std::logic_error("forward: replay noise shape mismatch");
      }
      tape.noise = replay->noise;
    } else {
      tape.noise = Matrix<S>::Zero(rows, hidden);
      for (Eigen::Index b = 0; b < n_seq; ++b) {
        if (!batch.noise_flags[static_cast<std::size_t>(b)]) continue;
        for (Eigen::Index t = 0; t < max_len; ++t) {
          for (Eigen::Index c = 0; c < hidden; ++c) {
            tape.noise(b * max_len + t, c) =
                static_cast<S>(rng.normal(0.0, batch.noise_sigma));
          }
        }
      }
    }
    x += tape.noise;
  }

  const Matrix<S> pe = sinusoidal_pe<S>(max_len, hidden);
  for (Eigen::Index b = 0; b < n_seq; ++b) x.middleRows(b * max_len, max_len) += pe;

  Matrix<S> rot_cos, rot_sin;
  rotary_tables(max_len, dh, rot_cos, rot_sin);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    LayerTape<S> lt;

    lt.attn_in = ln_forward(x, lp.ln1_g, lp.ln1_b, lt.ln1);
    lt.q_rot = lt.attn_in * lp.w_q;
    lt.q_rot.rowwise() += lp.b_q.transpose();
    lt.k_rot = lt.attn_in * lp.w_k;
    lt.k_rot.rowwise() += lp.b_k.transpose();
    lt.v = lt.attn_in * lp.w_v;
    lt.v.rowwise() += lp.b_v.transpose();
    apply_rotary(lt.q_rot, n_seq, max_len, heads, dh, rot_cos, rot_sin, false);
    apply_rotary(lt.k_rot, n_seq, max_len, heads, dh, rot_cos, rot_sin, false);

    lt.ctx = Matrix<S>::Zero(rows, hidden);
    for (Eigen::Index b = 0; b < n_seq; ++b) {
      for (int h = 0; h < heads; ++h) {
        Matrix<S> scores = lt.q_rot.block(b * max_len, h * dh, max_len, dh) *
                           lt.k_rot.block(b * max_len, h * dh, max_len, dh).transpose() *
                           inv_sqrt_dh;
        for (Eigen::Index j = 0; j < max_len; ++j) {
          if (!batch.mask[static_cast<std::size_t>(b * max_len + j)]) {
            scores.col(j).setConstant(-std::numeric_limits<S>::infinity());
          }
        }
        Matrix<S> probs(max_len, max_len);
        for (Eigen::Index i = 0; i < max_len; ++i) {
          const S m = scores.row(i).maxCoeff();
          probs.row(i) = (scores.row(i).array() - m).exp().matrix();
          probs.row(i) /= probs.row(i).sum();
        }
        lt.probs_pre.push_back(probs);
        if (train && cfg.attention_dropout > 0.0) {
          Matrix<S> keep(max_len, max_len);
          if (replay) {
            const auto& src = replay->layers[static_cast<std::size_t>(l)]
                                  .drop_keep[static_cast<std::size_t>(b * heads + h)];
            if (src.rows() != max_len || src.cols() != max_len) {
              throw std::logic_error("forward: replay attention-dropout mask shape mismatch");
            }
            keep = src;
          } else {
            for (Eigen::Index i = 0; i < max_len; ++i) {
              for (Eigen::Index j = 0; j < max_len; ++j) {
                keep(i, j) = rng.uniform() >= cfg.attention_dropout ? S(1) : S(0);
              }
            }
          }
          lt.drop_keep.push_back(keep);
          probs.array() *= keep.array() / S(1.0 - cfg.attention_dropout);
        }
        lt.probs.push_back(probs);
        lt.ctx.block(b * max_len, h * dh, max_len, dh) =
            probs * lt.v.block(b * max_len, h * dh, max_len, dh);
      }
    }
    Matrix<S> attn_out = lt.ctx * lp.w_o;
    attn_out.rowwise() += lp.b_o.transpose();
    x += attn_out;

    lt.ff_in = ln_forward(x, lp.ln2_g, lp.ln2_b, lt.ln2);
    lt.ff_pre = lt.ff_in * lp.w_ff1;
    lt.ff_pre.rowwise() += lp.b_ff1.transpose();
    lt.ff_act = lt.ff_pre.cwiseMax(S(0));
    Matrix<S> ff_out = lt.ff_act * lp.w_ff2;
    ff_out.rowwise() += lp.b_ff2.transpose();
    x += ff_out;

    tape.layers.push_back(std::move(lt));
  }

  tape.hidden = Matrix<S>::Zero(n_seq, hidden);
  for (Eigen::Index b = 0; b < n_seq; ++b) {
    for (Eigen::Index t = 0; t < max_len; ++t) {
      if (batch.mask[static_cast<std::size_t>(b * max_len + t)]) {
        tape.hidden.row(b) += x.row(b * max_len + t);
      }
    }
    tape.hidden.row(b) /= static_cast<S>(batch.lengths[static_cast<std::size_t>(b)]);
  }

  if (cfg.use_projection_head) {
    Matrix<S> z = tape.hidden * params.proj_w;
    z.rowwise() += params.proj_b.transpose();
    tape.projected = z.array().tanh().matrix();
  } else {
    tape.projected = tape.hidden;
  }
  return tape;
}

template <typename S>
Tape<S> forward_eval(const Params<S>& params, const Batch<S>& batch) {
  Rng unused(0);
  return forward(params, batch, Mode::kEval, unused);
}

template <typename S>
Params<S> backward(const Params<S>& params, const Tape<S>& tape,
                   const Matrix<S>& grad_projected, const Matrix<S>& grad_hidden) {
  if (params.content_hash() != tape.params_hash) {
    throw std::logic_error("backward: parameters changed since the forward pass");
  }
  const EncoderConfig& cfg = params.config;
  const Batch<S>& batch = tape.batch;
  const Eigen::Index n_seq = batch.size;
  const Eigen::Index max_len = batch.max_len;
  const Eigen::Index rows = n_seq * max_len;
  const Eigen::Index hidden = cfg.hidden_dim;
  const int heads = cfg.n_heads;
  const int dh = cfg.head_dim();
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
  if (grad_projected.rows() != n_seq || grad_projected.cols() != hidden ||
      grad_hidden.rows() != n_seq || grad_hidden.cols() != hidden) {
    throw ValidationError("backward: upstream gradient shapes must be batch x hidden");
  }

  Params<S> grads = make_zero_params<S>(cfg);

  Matrix<S> g_hidden = grad_hidden;
  if (cfg.use_projection_head) {
    const Matrix<S> g_pre =
        (grad_projected.array() * (S(1) - tape.projected.array().square())).matrix();
    grads.proj_w += tape.hidden.transpose() * g_pre;
    grads.proj_b += g_pre.colwise().sum().transpose();
    g_hidden += g_pre * params.proj_w.transpose();
  } else {
    g_hidden += grad_projected;
  }

  Matrix<S> g_x = Matrix<S>::Zero(rows, hidden);
  for (Eigen::Index b = 0; b < n_seq; ++b) {
    const S inv_len = S(1) / static_cast<S>(batch.lengths[static_cast<std::size_t>(b)]);
    for (Eigen::Index t = 0; t < max_len; ++t) {
      if (batch.mask[static_cast<std::size_t>(b * max_len + t)]) {
        g_x.row(b * max_len + t) = g_hidden.row(b) * inv_len;
      }
    }
  }

  Matrix<S> rot_cos, rot_sin;
  rotary_tables(max_len, dh, rot_cos, rot_sin);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    auto& gl = grads.layers[static_cast<std::size_t>(l)];

    // feed-forward block
    gl.w_ff2 += lt.ff_act.transpose() * g_x;
    gl.b_ff2 += g_x.colwise().sum().transpose();
    Matrix<S> g_act = g_x * lp.w_ff2.transpose();
    Matrix<S> g_pre =
        (g_act.array() * (lt.ff_pre.array() > S(0)).template cast<S>()).matrix();
    gl.w_ff1 += lt.ff_in.transpose() * g_pre;
    gl.b_ff1 += g_pre.colwise().sum().transpose();
    Matrix<S> g_ff_in = g_pre * lp.w_ff1.transpose();
    Matrix<S> g_y1 = g_x + ln_backward(lt.ln2, g_ff_in, lp.ln2_g, gl.ln2_g, gl.ln2_b);

    // attention block
    gl.w_o += lt.ctx.transpose() * g_y1;
    gl.b_o += g_y1.colwise().sum().transpose();
    Matrix<S> g_ctx = g_y1 * lp.w_o.transpose();
    Matrix<S> g_q = Matrix<S>::Zero(rows, hidden);
    Matrix<S> g_k = Matrix<S>::Zero(rows, hidden);
    Matrix<S> g_v = Matrix<S>::Zero(rows, hidden);
    for (Eigen::Index b = 0; b < n_seq; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto idx = static_cast<std::size_t>(b * heads + h);
        const Matrix<S>& probs = lt.probs[idx];
        const Matrix<S>& probs_pre = lt.probs_pre[idx];
        const auto g_ctx_bh = g_ctx.block(b * max_len, h * dh, max_len, dh);
        Matrix<S> g_probs =
            g_ctx_bh * lt.v.block(b * max_len, h * dh, max_len, dh).transpose();
        g_v.block(b * max_len, h * dh, max_len, dh) += probs.transpose() * g_ctx_bh;
        if (!lt.drop_keep.empty()) {
          g_probs.array() *=
              lt.drop_keep[idx].array() / S(1.0 - cfg.attention_dropout);
        }
        Matrix<S> g_scores(max_len, max_len);
        for (Eigen::Index i = 0; i < max_len; ++i) {
          const S dot = (g_probs.row(i).array() * probs_pre.row(i).array()).sum();
          g_scores.row(i) =
              (probs_pre.row(i).array() * (g_probs.row(i).array() - dot)).matrix();
        }
        g_scores *= inv_sqrt_dh;
        g_q.block(b * max_len, h * dh, max_len, dh) +=
            g_scores * lt.k_rot.block(b * max_len, h * dh, max_len, dh);
        g_k.block(b * max_len, h * dh, max_len, dh) +=
            g_scores.transpose() * lt.q_rot.block(b * max_len, h * dh, max_len, dh);
      }
    }
    apply_rotary(g_q, n_seq, max_len, heads, dh, rot_cos, rot_sin, true);
    apply_rotary(g_k, n_seq, max_len, heads, dh, rot_cos, rot_sin, true);
    gl.w_q += lt.attn_in.transpose() * g_q;
    gl.b_q += g_q.colwise().sum().transpose();
    gl.w_k += lt.attn_in.transpose() * g_k;
    gl.b_k += g_k.colwise().sum().transpose();
    gl.w_v += lt.attn_in.transpose() * g_v;
    gl.b_v += g_v.colwise().sum().transpose();
    Matrix<S> g_attn_in =
        g_q * lp.w_q.transpose() + g_k * lp.w_k.transpose() + g_v * lp.w_v.transpose();
    g_x = g_y1 + ln_backward(lt.ln1, g_attn_in, lp.ln1_g, gl.ln1_g, gl.ln1_b);
  }

  // positional encodings and additive noise pass gradients straight through
  if (tape.feat_keep.size() > 0) {
    g_x.array() *= tape.feat_keep.array() / S(1.0 - cfg.feature_dropout);
  }
  Matrix<S> g_e =
      ln_backward(tape.ln0, g_x, params.embed_ln_g, grads.embed_ln_g, grads.embed_ln_b);
  grads.embed_w += batch.inputs.transpose() * g_e;
  grads.embed_b += g_e.colwise().sum().transpose();
  return grads;
}

namespace {

const char* kCheckpointMagic = "borrowdet-checkpoint v1";

}  // namespace

void save_checkpoint(const std::string& path, Params<float>& params, std::uint64_t seed,
                     const std::vector<std::string>& inventory) {
  const EncoderConfig& cfg = params.config;
  if (cfg.encoding_mode == EncodingMode::kOneHotIpa &&
      static_cast<int>(inventory.size()) != cfg.input_dim) {
    throw ValidationError("checkpoint: one-hot inventory size must equal input_dim");
  }
  std::ostringstream out;
  out << kCheckpointMagic << '\n';
  out << "version " << kVersion << '\n';
  out << "seed " << seed << '\n';
  out << "input_dim " << cfg.input_dim << '\n';
  out << "hidden_dim " << cfg.hidden_dim << '\n';
  out << "n_layers " << cfg.n_layers << '\n';
  out << "n_heads " << cfg.n_heads << '\n';
  out << "ff_dim " << cfg.ff_dim << '\n';
  out << "feature_dropout " << format_double(cfg.feature_dropout) << '\n';
  out << "attention_dropout " << format_double(cfg.attention_dropout) << '\n';
  out << "use_projection_head " << (cfg.use_projection_head ? 1 : 0) << '\n';
  out << "encoding_mode " << encoding_mode_name(cfg.encoding_mode) << '\n';
  if (!inventory.empty()) {
    out << "inventory " << inventory.size();
    for (const auto& s : inventory) out << ' ' << s;
    out << '\n';
  }
  for (const auto& view : params.arrays()) {
    out << "array " << view.name << ' ' << view.rows << ' ' << view.cols << '\n';
    out << base64_encode(view.data, static_cast<std::size_t>(view.size()) * sizeof(float))
        << '\n';
  }
  out << "end\n";
  write_file(path, out.str());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines[0] != kCheckpointMagic) {
    throw ValidationError(path + ": not a recognized checkpoint file");
  }
  LoadedCheckpoint loaded;
  EncoderConfig cfg;
  struct RawArray {
    Eigen::Index rows = 0, cols = 0;
    std::vector<std::uint8_t> bytes;
  };
  std::unordered_map<std::string, RawArray> raw;
  bool saw_end = false;

  std::size_t i = 1;
  const auto fail = [&](const std::string& msg) -> ValidationError {
    return ValidationError(path + ":" + std::to_string(i + 1) + ": " + msg);
  };
  for (; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const auto fields = split(line, ' ');
    const std::string& key = fields[0];
    if (key == "end") {
      saw_end = true;
      break;
    }
    if (key == "array") {
      if (fields.size() != 4) throw fail("malformed array header");
      RawArray arr;
      arr.rows = parse_long(fields[2], "array rows");
      arr.cols = parse_long(fields[3], "array cols");
      if (i + 1 >= lines.size()) throw fail("array data missing");
      arr.bytes = base64_decode(lines[++i]);
      if (arr.bytes.size() !=
          static_cast<std::size_t>(arr.rows) * static_cast<std::size_t>(arr.cols) *
              sizeof(float)) {
        throw fail("array byte count disagrees with its declared shape");
      }
      if (!raw.emplace(fields[1], std::move(arr)).second) {
        throw fail("duplicate array '" + fields[1] + "'");
      }
      continue;
    }
    if (fields.size() < 2) throw fail("malformed header line");
    const std::string& value = fields[1];
    if (key == "version") {
      loaded.version = value;
    } else if (key == "seed") {
      loaded.seed = static_cast<std::uint64_t>(
          std::stoull(value));
    } else if (key == "input_dim") {
      cfg.input_dim = static_cast<int>(parse_long(value, "input_dim"));
    } else if (key == "hidden_dim") {
      cfg.hidden_dim = static_cast<int>(parse_long(value, "hidden_dim"));
    } else if (key == "n_layers") {
      cfg.n_layers = static_cast<int>(parse_long(value, "n_layers"));
    } else if (key == "n_heads") {
      cfg.n_heads = static_cast<int>(parse_long(value, "n_heads"));
    } else if (key == "ff_dim") {
      cfg.ff_dim = static_cast<int>(parse_long(value, "ff_dim"));
    } else if (key == "feature_dropout") {
      cfg.feature_dropout = parse_double(value, "feature_dropout");
    } else if (key == "attention_dropout") {
      cfg.attention_dropout = parse_double(value, "attention_dropout");
    } else if (key == "use_projection_head") {
      cfg.use_projection_head = parse_long(value, "use_projection_head") != 0;
    } else if (key == "encoding_mode") {
      cfg.encoding_mode = encoding_mode_from_name(value);
    } else if (key == "inventory") {
      const auto n = static_cast<std::size_t>(parse_long(value, "inventory size"));
      if (fields.size() != n + 2) throw fail("inventory size disagrees with its symbols");
      loaded.inventory.assign(fields.begin() + 2, fields.end());
    } else {
      throw fail("unknown checkpoint key '" + key + "'");
    }
  }
  if (!saw_end) throw ValidationError(path + ": truncated checkpoint (missing end marker)");
  if (cfg.encoding_mode == EncodingMode::kOneHotIpa &&
      static_cast<int>(loaded.inventory.size()) != cfg.input_dim) {
    throw ValidationError(path + ": one-hot inventory size disagrees with input_dim");
  }

  loaded.params = make_zero_params<float>(cfg);
  auto views = loaded.params.arrays();
  if (views.size() != raw.size()) {
    throw ValidationError(path + ": checkpoint holds " + std::to_string(raw.size()) +
                          " arrays, config requires " + std::to_string(views.size()));
  }
  for (auto& view : views) {
    const auto it = raw.find(view.name);
    if (it == raw.end()) throw ValidationError(path + ": missing array '" + view.name + "'");
    if (it->second.rows != view.rows || it->second.cols != view.cols) {
      throw ValidationError(path + ": array '" + view.name + "' has shape " +
                            std::to_string(it->second.rows) + "x" +
                            std::to_string(it->second.cols) + ", expected " +
                            std::to_string(view.rows) + "x" + std::to_string(view.cols));
    }
    std::memcpy(view.data, it->second.bytes.data(), it->second.bytes.size());
  }
  return loaded;
}

template struct Params<float>;
template struct Params<double>;
template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;
template struct Batch<float>;
template struct Batch<double>;

template Params<float> make_zero_params<float>(const EncoderConfig&);
template Params<double> make_zero_params<double>(const EncoderConfig&);
template Params<float> init_params<float>(const EncoderConfig&, std::uint64_t);
template Params<double> init_params<double>(const EncoderConfig&, std::uint64_t);
template Matrix<float> sinusoidal_pe<float>(Eigen::Index, Eigen::Index);
template Matrix<double> sinusoidal_pe<double>(Eigen::Index, Eigen::Index);
template Matrix<float> InputEncoder::encode<float>(const corpus::WordForm&) const;
template Matrix<double> InputEncoder::encode<double>(const corpus::WordForm&) const;
template Matrix<float> InputEncoder::encode_segments<float>(const std::vector<phon::Segment>&,
                                                            const std::string&) const;
template Matrix<double> InputEncoder::encode_segments<double>(
    const std::vector<phon::Segment>&, const std::string&) const;
template Batch<float> make_batch<float>(const std::vector<const corpus::WordForm*>&,
                                        const InputEncoder&);
template Batch<double> make_batch<double>(const std::vector<const corpus::WordForm*>&,
                                          const InputEncoder&);
template Tape<float> forward<float>(const Params<float>&, const Batch<float>&, Mode, Rng&,
                                    const Tape<float>*);
template Tape<double> forward<double>(const Params<double>&, const Batch<double>&, Mode,
                                      Rng&, const Tape<double>*);
template Tape<float> forward_eval<float>(const Params<float>&, const Batch<float>&);
template Tape<double> forward_eval<double>(const Params<double>&, const Batch<double>&);
template Params<float> backward<float>(const Params<float>&, const Tape<float>&,
                                       const Matrix<float>&, const Matrix<float>&);
template Params<double> backward<double>(const Params<double>&, const Tape<double>&,
                                         const Matrix<double>&, const Matrix<double>&);

}  // namespace borrowdet::encoder
