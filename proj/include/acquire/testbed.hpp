#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acquire/blur_operator.hpp"
#include "acquire/feasible_set.hpp"
#include "acquire/image.hpp"
#include "acquire/image_io.hpp"
#include "acquire/poisson_model.hpp"
#include "acquire/psf.hpp"

namespace acquire {

// ---------------------------------------------------------------- phantom

struct Ellipse {
  double intensity;
  double a;  // semi-axis along x
  double b;  // semi-axis along y
  double x0;
  double y0;
  double phi_deg;
};

enum class PhantomVariant { Original, Modified };

inline std::array<Ellipse, 10> shepp_logan_ellipses(PhantomVariant variant = PhantomVariant::Original) {
  const bool mod = variant == PhantomVariant::Modified;
  const double inner = mod ? -0.8 : -0.98;
  const double pair = mod ? -0.2 : -0.02;
  const double small = mod ? 0.1 : 0.01;
  return {{
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
      {inner, 0.6624, 0.874, 0.0, -0.0184, 0.0},
      {pair, 0.11, 0.31, 0.22, 0.0, -18.0},
      {pair, 0.16, 0.41, -0.22, 0.0, 18.0},
      {small, 0.21, 0.25, 0.0, 0.35, 0.0},
      {small, 0.046, 0.046, 0.0, 0.1, 0.0},
      {small, 0.046, 0.046, 0.0, -0.1, 0.0},
      {small, 0.046, 0.023, -0.08, -0.605, 0.0},
      {small, 0.023, 0.023, 0.0, -0.606, 0.0},
      {small, 0.023, 0.046, 0.06, -0.605, 0.0},
  }};
}

/// Coordinate of pixel j on [-1, 1]; row 0 is y = +1, column 0 is x = -1.
inline double phantom_axis(std::size_t j, std::size_t n) {
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  return (static_cast<double>(j) - half) / half;
}

inline bool ellipse_contains(const Ellipse& e, double x, double y) {
  const double phi = e.phi_deg * std::numbers::pi / 180.0;
  const double c = std::cos(phi), s = std::sin(phi);
  const double dx = x - e.x0, dy = y - e.y0;
  const double u = dx * c + dy * s;
  const double v = dy * c - dx * s;
  return u * u / (e.a * e.a) + v * v / (e.b * e.b) <= 1.0;
}

template <typename Range>
Image render_ellipses(std::size_t n, const Range& ellipses) {
  detail::require(n >= 2, "render_ellipses: n must be >= 2");
  Vector p(static_cast<Eigen::Index>(n * n));
  for (std::size_t l = 0; l < n; ++l) {
    const double x = phantom_axis(l, n);
    for (std::size_t k = 0; k < n; ++k) {
      const double y = phantom_axis(n - 1 - k, n);
      double v = 0.0;
      for (const Ellipse& e : ellipses)
        if (ellipse_contains(e, x, y)) v += e.intensity;
      // Overlapping intensities such as 1 - 0.8 - 0.2 may round below zero.
      p[static_cast<Eigen::Index>(l * n + k)] = std::max(v, 0.0);
    }
  }
  return Image(n, n, std::move(p));
}

/// Ten-ellipse Shepp-Logan head phantom, intensities in [0, 1].
inline Image shepp_logan(std::size_t n, PhantomVariant variant = PhantomVariant::Original) {
  detail::require(n >= 32, "shepp_logan: n must be >= 32");
  return render_ellipses(n, shepp_logan_ellipses(variant));
}

// ------------------------------------------------------------------- noise

/// 10 log10(N / sqrt(N + N_b)) for N signal counts and N_b background counts.
inline double snr_db(double signal_counts, double background_counts) {
  return 10.0 * std::log10(signal_counts / std::sqrt(signal_counts + background_counts));
}

/// Total signal count t with t / sqrt(t + b_total) = 10^(snr/10).
inline double snr_total_counts(double b_total, double target_snr_db) {
  detail::require(b_total >= 0.0, "snr_total_counts: background must be nonnegative");
  const double r = std::pow(10.0, target_snr_db / 10.0);
  return 0.5 * (r * r + r * std::sqrt(r * r + 4.0 * b_total));
}

/// Factor beta such that beta * sum(x_ref) hits the target SNR.
inline double snr_scale_factor(const Image& x_ref, double b_total, double target_snr_db) {
  const double n0 = x_ref.sum();
  detail::require(n0 > 0.0, "snr_scale_factor: reference must have positive flux");
  return snr_total_counts(b_total, target_snr_db) / n0;
}

/// Counter-based generator: draw j of stream `stream` under key `seed` is a
/// pure function of (seed, stream, j), so pixels can be sampled in any order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform on the open interval (0, 1).
  double next_double() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

namespace detail {

inline std::uint64_t poisson_inversion(double lambda, CounterRng& rng) {
  for (;;) {
    double p = std::exp(-lambda);
    double cdf = p;
    const double u = rng.next_double();
    std::uint64_t x = 0;
    while (u > cdf && x < 1000) {
      ++x;
      p *= lambda / static_cast<double>(x);
      cdf += p;
    }
    if (x < 1000) return x;  // only reached if round-off leaves cdf below u
  }
}

// Transformed rejection with squeeze (Hormann 1993).
inline std::uint64_t poisson_ptrd(double lambda, CounterRng& rng) {
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.next_double() - 0.5;
    const double v = rng.next_double();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <= -lambda + k * loglam - std::lgamma(k + 1.0))
      return static_cast<std::uint64_t>(k);
  }
}

}  // namespace detail

/// One Poisson draw with mean lambda from the given stream.
inline std::uint64_t poisson_draw(double lambda, CounterRng& rng) {
  detail::require(lambda >= 0.0 && std::isfinite(lambda), "poisson_draw: mean must be finite and nonnegative");
  if (lambda == 0.0) return 0;
  return lambda < 30.0 ? detail::poisson_inversion(lambda, rng) : detail::poisson_ptrd(lambda, rng);
}

/// Independent Poisson counts per pixel; pixel i uses stream i of `seed`.
inline Image poisson_sample(const Image& mean, std::uint64_t seed) {
  Vector counts(mean.data().size());
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    counts[i] = static_cast<double>(poisson_draw(mean.data()[i], rng));
  }
  return Image(mean.shape(), std::move(counts));
}

// ----------------------------------------------------------------- problems

inline constexpr double kDefaultBackground = 1e-10;

struct ProblemOptions {
  double background = kDefaultBackground;  // per pixel; added to the counts and kept as b after rescaling
  bool noiseless = false;                  // y = A x* + b, no sampling
};

/// A blurred, noisy observation of a known image, in solver units: the
/// counts were divided by max(y) so the observation has unit maximum.
struct TestProblem {
  Image ground_truth;
  Image observed;
  Psf psf;
  double background = kDefaultBackground;
  double snr_target = 0.0;
  std::uint64_t seed = 0;
  bool noiseless = false;
  double count_scale = 1.0;   // counts = count_scale * solver units
  double total_counts = 0.0;  // sum of drawn counts (or exact means when noiseless)
  double flux = 0.0;          // e^T (y - b)

  PoissonData data() const { return PoissonData(BlurOperator(observed.shape(), psf), observed.data(), background_vector()); }
  Vector background_vector() const { return Vector::Constant(static_cast<Eigen::Index>(observed.size()), background); }

  /// SNR recomputed from the counts.
  double measured_snr() const {
    const double nb = background * static_cast<double>(observed.size());
    return snr_db(total_counts - nb, nb);
  }
};

/// Scale the reference to the target SNR, blur, add background, draw
/// Poisson counts, then divide truth and observation by max(y).
inline TestProblem make_problem(const Image& reference, const Psf& psf, double snr_target_db, std::uint64_t seed,
                                const ProblemOptions& options = {}) {
  detail::require(reference.min() >= 0.0, "make_problem: reference must be nonnegative");
  detail::require(options.background > 0.0, "make_problem: background must be positive");
  const BlurOperator op(reference.shape(), psf);
  const double n = static_cast<double>(reference.size());

  TestProblem p{.ground_truth = reference, .observed = reference, .psf = psf};
  p.background = options.background;
  p.snr_target = snr_target_db;
  p.seed = seed;
  p.noiseless = options.noiseless;

  if (options.noiseless) {
    p.observed = Image(reference.shape(), (op.apply(reference.data()).array() + options.background).matrix());
    p.count_scale = 1.0;
    p.total_counts = p.observed.sum();
    p.flux = p.observed.sum() - options.background * n;
    return p;
  }

  const double beta = snr_scale_factor(reference, options.background * n, snr_target_db);
  const Vector scaled = beta * reference.data();
  Vector mean = op.apply(scaled).cwiseMax(0.0);
  mean.array() += options.background;
  const Image counts = poisson_sample(Image(reference.shape(), mean), seed);
  const double peak = counts.max();
  detail::require(peak > 0.0, "make_problem: all counts are zero");

  p.count_scale = peak;
  p.total_counts = counts.sum();
  p.observed = Image(reference.shape(), counts.data() / peak);
  p.ground_truth = Image(reference.shape(), scaled / peak);
  p.flux = p.observed.sum() - options.background * n;
  return p;
}

enum class StartRule { Observed, Flat };

/// Starting guess projected onto the feasible set: the observation itself or
/// the constant image flux / n.
inline Vector initial_guess(const TestProblem& p, StartRule rule, const FeasibleSet& set) {
  const auto n = static_cast<Eigen::Index>(p.observed.size());
  Vector x = rule == StartRule::Observed ? Vector(p.observed.data())
                                         : Vector::Constant(n, p.flux / static_cast<double>(n));
  return set.project(x);
}

inline FeasibleSet make_feasible_set(const TestProblem& p, bool flux_constraint) {
  return flux_constraint ? FeasibleSet::nonnegative_flux(p.flux) : FeasibleSet::nonnegative();
}

// ------------------------------------------------------------------ bundles

inline void save_problem(const TestProblem& p, const std::filesystem::path& dir,
                         const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  write_f64img(p.ground_truth, dir / "ground_truth.f64img");
  write_f64img(p.observed, dir / "observed.f64img");
  write_f64img(p.psf.kernel(), dir / "psf.f64img");
  nlohmann::json meta = extra;
  meta["snr"] = p.snr_target;
  meta["seed"] = p.seed;
  meta["noiseless"] = p.noiseless;
  meta["background"] = p.background;
  meta["count_scale"] = p.count_scale;
  meta["total_counts"] = p.total_counts;
  meta["flux"] = p.flux;
  meta["measured_snr"] = p.noiseless ? nlohmann::json(nullptr) : nlohmann::json(p.measured_snr());
  std::ofstream out(dir / "meta.json");
  if (!out) throw ImageIoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

inline TestProblem load_problem(const std::filesystem::path& dir, nlohmann::json* meta_out = nullptr) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw ImageIoError("cannot read " + (dir / "meta.json").string());
  const nlohmann::json meta = nlohmann::json::parse(in);
  TestProblem p{.ground_truth = read_f64img(dir / "ground_truth.f64img"),
                .observed = read_f64img(dir / "observed.f64img"),
                .psf = Psf(read_f64img(dir / "psf.f64img"))};
  detail::require(p.ground_truth.shape() == p.observed.shape(), "load_problem: image shapes differ");
  p.snr_target = meta.at("snr").get<double>();
  p.seed = meta.at("seed").get<std::uint64_t>();
  p.noiseless = meta.value("noiseless", false);
  p.background = meta.at("background").get<double>();
  p.count_scale = meta.at("count_scale").get<double>();
  p.total_counts = meta.at("total_counts").get<double>();
  p.flux = meta.at("flux").get<double>();
  if (meta_out) *meta_out = meta;
  return p;
}

}  // namespace acquire
