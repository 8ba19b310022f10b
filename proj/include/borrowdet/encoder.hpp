#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "borrowdet/corpus.hpp"
#include "borrowdet/rng.hpp"

namespace borrowdet::encoder {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class EncodingMode { kFeatureVectors, kOneHotIpa };

std::string encoding_mode_name(EncodingMode mode);
EncodingMode encoding_mode_from_name(const std::string& name);

struct EncoderConfig {
  int input_dim = 39;
  int hidden_dim = 256;
  int n_layers = 1;
  int n_heads = 4;
  int ff_dim = 1024;  // 4 x hidden for the default size
  double feature_dropout = 0.1;
  double attention_dropout = 0.1;
  bool use_projection_head = true;
  EncodingMode encoding_mode = EncodingMode::kFeatureVectors;

  int head_dim() const { return hidden_dim / n_heads; }
  void validate() const;
};

// Closed-form trainable-parameter count; 866,304 for the defaults.
std::size_t param_count(const EncoderConfig& config);

// Mutable named view over one parameter array, used to drive the optimizer,
// the checkpoint writer, and gradient checks in one fixed order.
template <typename S>
struct ArrayView {
  std::string name;
  S* data;
  Eigen::Index rows, cols;
  Eigen::Index size() const { return rows * cols; }
};

template <typename S>
struct Params {
  EncoderConfig config;

  Matrix<S> embed_w;  // input_dim x hidden
  Vector<S> embed_b;
  Vector<S> embed_ln_g, embed_ln_b;

  struct Layer {
    Vector<S> ln1_g, ln1_b;                // pre-attention norm
    Matrix<S> w_q, w_k, w_v, w_o;          // hidden x hidden
    Vector<S> b_q, b_k, b_v, b_o;
    Vector<S> ln2_g, ln2_b;                // pre-feed-forward norm
    Matrix<S> w_ff1;                       // hidden x ff
    Vector<S> b_ff1;
    Matrix<S> w_ff2;                       // ff x hidden
    Vector<S> b_ff2;
  };
  std::vector<Layer> layers;

  Matrix<S> proj_w;  // hidden x hidden; zero-sized when the head is disabled
  Vector<S> proj_b;

  // Every named array in serialization order.
  std::vector<ArrayView<S>> arrays();
  std::vector<ArrayView<const S>> arrays() const;
  std::size_t count() const;
  void set_zero();
  std::uint64_t content_hash() const;

  template <typename T>
  Params<T> cast() const;
};

// All arrays allocated and zeroed to the shapes the config dictates.
template <typename S>
Params<S> make_zero_params(const EncoderConfig& config);

// Weights uniform in ±1/sqrt(fan_in), biases zero, layer-norm gains one.
template <typename S>
Params<S> init_params(const EncoderConfig& config, std::uint64_t seed);

// Interleaved sin/cos table: entry (pos, 2k) = sin(pos / 10000^(2k/dim)),
// entry (pos, 2k+1) the matching cosine.
template <typename S>
Matrix<S> sinusoidal_pe(Eigen::Index max_len, Eigen::Index dim);

// Turns word forms into model input rows; owns the symbol inventory needed
// by the one-hot mode.
struct InputEncoder {
  EncodingMode mode = EncodingMode::kFeatureVectors;
  std::vector<std::string> inventory;  // one-hot mode only, sorted
  std::unordered_map<std::string, int> index;

  int input_dim() const;
  static InputEncoder feature_vectors();
  static InputEncoder one_hot(std::vector<std::string> symbols);
  // Inventory = distinct segment symbols present in the wordlist.
  static InputEncoder from_wordlist(const corpus::Wordlist& wordlist, EncodingMode mode);

  template <typename S>
  Matrix<S> encode(const corpus::WordForm& form) const;  // length x input_dim
  template <typename S>
  Matrix<S> encode_segments(const std::vector<phon::Segment>& segments,
                            const std::string& context) const;
};

template <typename S>
struct Batch {
  Eigen::Index size = 0;     // number of sequences
  Eigen::Index max_len = 0;  // padded length
  Matrix<S> inputs;          // (size * max_len) x input_dim; padded rows zero
  std::vector<std::uint8_t> mask;  // size * max_len; 1 at valid positions
  std::vector<int> lengths;        // per sequence
  std::vector<std::string> concepts;
  std::vector<std::string> form_ids;
  // Train-time augmentation: rows flagged here receive additive Gaussian
  // noise inside the forward pass.
  std::vector<std::uint8_t> noise_flags;
  double noise_sigma = 0.0;

  void validate(const EncoderConfig& config) const;
};

template <typename S>
Batch<S> make_batch(const std::vector<const corpus::WordForm*>& forms,
                    const InputEncoder& input_encoder);

enum class Mode { kTrain, kEval };

template <typename S>
struct LnCache {
  Matrix<S> xhat;      // normalized activations
  Vector<S> inv_std;   // per position
};

template <typename S>
struct LayerTape {
  LnCache<S> ln1;
  Matrix<S> attn_in;             // post-ln1, (B*L) x hidden
  Matrix<S> q_rot, k_rot, v;     // (B*L) x hidden
  std::vector<Matrix<S>> probs_pre;   // per (sequence, head): L x L softmax rows
  std::vector<Matrix<S>> drop_keep;   // attention-dropout keep masks; empty in eval
  std::vector<Matrix<S>> probs;       // post-dropout probabilities
  Matrix<S> ctx;                 // concatenated head outputs
  LnCache<S> ln2;
  Matrix<S> ff_in;               // post-ln2
  Matrix<S> ff_pre;              // pre-activation, (B*L) x ff
  Matrix<S> ff_act;              // post-ReLU
};

// Everything backward() needs, including the sampled dropout masks and noise
// so a forward pass is exactly replayable (finite-difference checks).
template <typename S>
struct Tape {
  Mode mode = Mode::kEval;
  Batch<S> batch;
  LnCache<S> ln0;
  Matrix<S> feat_keep;   // feature-dropout keep mask; empty in eval
  Matrix<S> noise;       // additive noise actually applied; empty in eval
  std::vector<LayerTape<S>> layers;
  Matrix<S> hidden;      // B x hidden, masked mean over valid positions
  Matrix<S> projected;   // B x hidden
  std::uint64_t params_hash = 0;
};

// When `replay` is given, its dropout masks and noise draws are reused
// instead of sampling from `rng` (shapes must match).
template <typename S>
Tape<S> forward(const Params<S>& params, const Batch<S>& batch, Mode mode, Rng& rng,
                const Tape<S>* replay = nullptr);

// Dropout- and noise-free forward; ignores batch noise flags.
template <typename S>
Tape<S> forward_eval(const Params<S>& params, const Batch<S>& batch);

// Exact gradients for every parameter given upstream gradients on the
// projected and/or pooled outputs (pass zero matrices for the unused one).
// Throws if `params` changed since the forward pass that built `tape`.
template <typename S>
Params<S> backward(const Params<S>& params, const Tape<S>& tape,
                   const Matrix<S>& grad_projected, const Matrix<S>& grad_hidden);

// Self-describing text checkpoint: a config header plus named float32
// arrays in base64 (little-endian).
void save_checkpoint(const std::string& path, Params<float>& params, std::uint64_t seed,
                     const std::vector<std::string>& inventory = {});

struct LoadedCheckpoint {
  Params<float> params;
  std::uint64_t seed = 0;
  std::string version;
  std::vector<std::string> inventory;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace borrowdet::encoder
