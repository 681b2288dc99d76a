#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace meftlab {

/// Invalid configuration (unknown method, bad extents, missing key).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int n_layers{4};
  int d_model{32};
  int n_heads{4};
  int d_ff{64};
  int seq_len{64};
  int d_input{8};
  int n_classes{6};
  int proj_dim{256};
  double init_std{0.02};      // encoder weights
  double frontend_std{0.02};  // conv stem and position embedding
  double ln_eps{1e-5};

  void validate() const;
  [[nodiscard]] int d_head() const { return d_model / n_heads; }

  static ModelConfig whisper_small();
  /// N=4, d=32, heads=4, d_ff=64, n=64, d_input=8, K=6, proj=32, init std 0.1.
  static ModelConfig toy();
};

enum class MethodKind { Vanilla, Head, Adapter, Lora, AdaLora, BitFit, Lst, Unipt, Sherl };

std::string_view method_name(MethodKind kind);
/// Throws ConfigError naming the unknown method.
MethodKind method_from_name(std::string_view name);

struct MethodSpec {
  MethodKind kind{MethodKind::Vanilla};
  int dim{64};     // adapter bottleneck
  int r{64};       // lora rank
  int init_r{64};  // adalora initial rank per matrix
  int rf{8};       // meft reduction factor
  int h_side{0};   // lst side hidden width, 0 = default rule
  double gate_temperature{0.1};

  [[nodiscard]] bool is_meft() const {
    return kind == MethodKind::Lst || kind == MethodKind::Unipt || kind == MethodKind::Sherl;
  }
  [[nodiscard]] bool is_peft() const {
    return kind == MethodKind::Adapter || kind == MethodKind::Lora || kind == MethodKind::AdaLora ||
           kind == MethodKind::BitFit;
  }
  /// Row label such as "lst_rf8", "lora_r64", "adapter_64", "bitfit".
  [[nodiscard]] std::string label() const;
  /// Side width d_model / rf; throws ConfigError when rf does not divide d_model.
  [[nodiscard]] int d_side(const ModelConfig& cfg) const;
  /// LST side-block hidden width: h_side if set, 256 at d_model 768, else d_side / 2.
  [[nodiscard]] int lst_hidden(const ModelConfig& cfg) const;
  void validate(const ModelConfig& cfg) const;

  static MethodSpec vanilla() { return {MethodKind::Vanilla}; }
  static MethodSpec head() { return {MethodKind::Head}; }
  static MethodSpec bitfit() { return {MethodKind::BitFit}; }
  static MethodSpec adapter(int dim);
  static MethodSpec lora(int r);
  static MethodSpec adalora(int init_r);
  static MethodSpec lst(int rf);
  static MethodSpec unipt(int rf);
  static MethodSpec sherl(int rf);
};

}  // namespace meftlab
