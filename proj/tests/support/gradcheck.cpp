#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "odn/ops.hpp"

namespace odn::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, float scale, bool requires_grad) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, scale);
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

Tensor uniform_tensor(const Shape& shape, std::uint64_t seed, float lo, float hi, bool requires_grad) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

void push_away_from_zero(Tensor& t, float margin) {
  for (auto& v : t.data()) {
    if (std::abs(v) < margin) v = v < 0.0f ? -margin : margin;
  }
}

Tensor random_projection(const Tensor& output, std::uint64_t seed) {
  const auto direction = random_tensor(output.shape(), seed ^ 0x5eedULL);
  std::vector<float> w(direction.data().begin(), direction.data().end());
  // sum(output * direction) expressed with differentiable primitives: a
  // linear layer over the flattened output.
  const auto flat = output.reshape({1, output.numel()});
  const auto weight = Tensor::from({1, output.numel()}, std::move(w));
  return sum(linear(flat, weight, Tensor::zeros({1})));
}

GradCheckResult gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
  for (Tensor t : inputs) {
    if (t.requires_grad()) t.clear_grad();
  }
  f(inputs).backward();

  GradCheckResult result;
  std::mt19937_64 rng(options.probe_seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor x = inputs[i];
    if (!x.requires_grad()) continue;
    const std::vector<float> analytic(x.grad().begin(), x.grad().end());
    std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (x.numel() > options.probes_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.probes_per_input));
    }
    for (auto k : coords) {
      auto& v = x.data()[static_cast<std::size_t>(k)];
      const float original = v;
      double plus = 0.0, minus = 0.0, centre = 0.0;
      {
        NoGradGuard guard;
        if (options.kink_threshold > 0.0) centre = f(inputs).item();
        v = static_cast<float>(original + options.step);
        plus = f(inputs).item();
        v = static_cast<float>(original - options.step);
        minus = f(inputs).item();
        v = original;
      }
      // Use the step actually representable in float.
      const double h = (static_cast<double>(static_cast<float>(original + options.step)) -
                        static_cast<double>(static_cast<float>(original - options.step))) /
                       2.0;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[static_cast<std::size_t>(k)];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      double err = std::abs(a - numeric) / denom;
      const char* label = "numeric";
      if (options.kink_threshold > 0.0) {
        const double right = (plus - centre) / h, left = (centre - minus) / h;
        if (std::abs(right - left) > options.kink_threshold) {
          ++result.kinks;
          const double lo = std::min(left, right), hi = std::max(left, right);
          err = (a < lo ? lo - a : a > hi ? a - hi : 0.0) / denom;
          label = "one-sided bound";
        }
      }
      ++result.coordinates;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        std::ostringstream os;
        os << "input " << i << "[" << k << "]: analytic " << a << " vs " << label << " " << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace odn::testing
