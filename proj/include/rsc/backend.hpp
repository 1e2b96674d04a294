#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "rsc/analytic_gmm.hpp"
#include "rsc/diffusion.hpp"
#include "rsc/toy_conv.hpp"

namespace rsc {

namespace toy {

inline constexpr char kWeightsMagic[8] = {'R', 'S', 'C', 'T', 'O', 'Y', 'W', 'B'};
inline constexpr std::uint32_t kWeightsVersion = 2;

namespace detail {
template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(in), ErrorKind::DecodeFailure, "truncated weights file");
  return v;
}
}  // namespace detail

// Layout: magic[8], u32 version, i32 height,width,channels,attn_width,token_width,queries,
// f32 mean[3], f32 var, u64 adapter_seed, u64 resampler_seed, u8 trained, u64 count, f32 params[count].
inline void save_weights(const std::filesystem::path& path, const ToyConvNet& net) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  const ToyConvConfig& c = net.config();
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  detail::put(out, kWeightsVersion);
  for (int v : {c.height, c.width, c.channels, c.attn_width, c.token_width, c.queries}) detail::put<std::int32_t>(out, v);
  for (float v : c.data_mean) detail::put(out, v);
  detail::put(out, c.data_var);
  detail::put(out, c.adapter_seed);
  detail::put(out, c.resampler_seed);
  detail::put<std::uint8_t>(out, c.trained ? 1 : 0);
  ToyConvParams params = net.params();
  detail::put<std::uint64_t>(out, params.count());
  params.for_each([&](float* data, std::size_t n) { out.write(reinterpret_cast<const char*>(data), n * sizeof(float)); });
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

inline ToyConvNet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in && std::memcmp(magic, kWeightsMagic, sizeof magic) == 0, ErrorKind::DecodeFailure,
          path.string() + " is not a toy weights file");
  const auto version = detail::get<std::uint32_t>(in);
  require(version == kWeightsVersion, ErrorKind::DecodeFailure,
          "weights version " + std::to_string(version) + " unsupported");
  ToyConvConfig c;
  c.height = detail::get<std::int32_t>(in);
  c.width = detail::get<std::int32_t>(in);
  c.channels = detail::get<std::int32_t>(in);
  c.attn_width = detail::get<std::int32_t>(in);
  c.token_width = detail::get<std::int32_t>(in);
  c.queries = detail::get<std::int32_t>(in);
  for (float& v : c.data_mean) v = detail::get<float>(in);
  c.data_var = detail::get<float>(in);
  c.adapter_seed = detail::get<std::uint64_t>(in);
  c.resampler_seed = detail::get<std::uint64_t>(in);
  c.trained = detail::get<std::uint8_t>(in) != 0;
  require(c.height > 0 && c.width > 0 && c.channels > 0 && c.attn_width > 0 && c.token_width > 0 && c.queries > 0,
          ErrorKind::DecodeFailure, "bad weights header");
  ToyConvParams params = ToyConvParams::zeros_like(c);
  const auto count = detail::get<std::uint64_t>(in);
  require(count == params.count(), ErrorKind::DecodeFailure, "weights parameter count mismatch");
  params.for_each([&](float* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  });
  require(static_cast<bool>(in), ErrorKind::DecodeFailure, "truncated weights file");
  return ToyConvNet(c, std::move(params));
}

}  // namespace toy

// The trained-conv backend's denoiser: latent = 3×H×W pixel space.
class ToyConvDenoiser final : public Denoiser {
 public:
  explicit ToyConvDenoiser(toy::ToyConvNet net) : net_(std::move(net)) {}

  std::string name() const override { return "trained-conv"; }
  const toy::ToyConvNet& net() const { return net_; }
  Shape3 latent_shape() const { return {3, net_.config().height, net_.config().width}; }

  std::vector<InjectionSite> injection_sites() const override {
    const Shape3 s{net_.config().channels, net_.config().height, net_.config().width};
    return {{toy::kSiteMid, s}, {toy::kSiteDec, s}};
  }

  Tensor predict_noise(const Tensor& z, Timestep t, const ConditionBundle* conditions,
                       InjectionTrace* trace) const override {
    require_same_shape(z.shape(), latent_shape(), name() + " latent");
    // Noise-free latent: ε̂ = −σ·∇log p vanishes with σ, as in the analytic backend.
    if (t.alpha_bar >= 1.0) return Tensor(z.shape());
    const toy::TensorF zf = z.cast<float>();
    toy::NetInput in;
    in.latent = &zf;
    in.alpha_bar = t.alpha_bar;
    toy::TensorF mid, dec;
    RowMatrix<float> visual;
    if (conditions) {
      for (const auto& [site, r] : conditions->c_pose) {
        if (site == toy::kSiteMid) {
          mid = r.cast<float>();
          in.pose_mid = &mid;
        } else if (site == toy::kSiteDec) {
          dec = r.cast<float>();
          in.pose_dec = &dec;
        } else {
          throw Error(ErrorKind::ShapeMismatch, "no injection site named " + site);
        }
      }
      if (conditions->has_visual()) {
        visual = conditions->c_visual.cast<float>();
        in.visual = &visual;
        in.layout = &conditions->c_layout;
      }
    }
    return net_.forward(in, nullptr, trace).cast<double>();
  }

 private:
  toy::ToyConvNet net_;
};

// Sizes and seeds the condition generator must match for this denoiser.
struct ConditioningSpec {
  int queries = 4;
  int token_width = 32;
  std::uint64_t resampler_seed = 23;
  std::uint64_t adapter_seed = 17;
};

// A denoiser, its latent codec and the step schedule.
struct Backend {
  std::string name;
  std::shared_ptr<const Denoiser> denoiser;
  std::shared_ptr<const LatentCodec> codec;
  NoiseSchedule schedule;
  ConditioningSpec conditioning;
  bool trained = true;  // false for trained-conv running on seeded weights
};

struct BackendOptions {
  int steps = 50;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> weights;  // trained-conv only
};

// Builds "analytic-gmm" or "trained-conv". Without a weights file the trained-conv
// denoiser carries seeded random weights.
inline Backend make_toy_backend(const std::string& kind, const BackendOptions& options = {}) {
  Backend b;
  b.name = kind;
  b.codec = std::make_shared<IdentityCodec>();
  b.schedule = NoiseSchedule::cosine(options.steps);
  if (kind == "analytic-gmm") {
    b.denoiser = std::make_shared<AnalyticGmmDenoiser>(GaussianMixture::default_2d());
  } else if (kind == "trained-conv") {
    toy::ToyConvNet net = options.weights ? toy::load_weights(*options.weights)
                                          : toy::ToyConvNet(toy::ToyConvConfig{},
                                                            toy::ToyConvParams::seeded(toy::ToyConvConfig{}, options.seed));
    const toy::ToyConvConfig& c = net.config();
    b.conditioning = {c.queries, c.token_width, c.resampler_seed, c.adapter_seed};
    b.trained = c.trained;
    b.denoiser = std::make_shared<ToyConvDenoiser>(std::move(net));
  } else {
    throw Error(ErrorKind::UnknownName, "backend kind '" + kind + "'");
  }
  return b;
}

// "external:<name>" backends are plug-ins registered at runtime.
class BackendRegistry {
 public:
  using Factory = std::function<Backend(const BackendOptions&)>;

  static BackendRegistry& instance() {
    static BackendRegistry registry;
    return registry;
  }

  void add(const std::string& name, Factory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
  }

  Backend make(const std::string& name, const BackendOptions& options) const {
    if (name == "analytic-gmm" || name == "trained-conv") return make_toy_backend(name, options);
    constexpr std::string_view prefix = "external:";
    if (name.starts_with(prefix)) {
      std::lock_guard lock(mutex_);
      auto it = factories_.find(name.substr(prefix.size()));
      require(it != factories_.end(), ErrorKind::UnknownName, "no external backend '" + name + "' registered");
      return it->second(options);
    }
    throw Error(ErrorKind::UnknownName, "backend '" + name + "'");
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Factory> factories_;
};

}  // namespace rsc
