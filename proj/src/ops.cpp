#include "odn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "odn/error.hpp"
#include "odn/kernels.hpp"

namespace odn {

namespace {

std::size_t at(std::int64_t i) { return static_cast<std::size_t>(i); }

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                        ", got " + shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (stride <= 0 || padding < 0) fail(ErrorCode::kInvalidArgument, "conv2d: stride must be >= 1 and padding >= 0");
  if (input.dim(1) != weight.dim(1) || weight.dim(2) != weight.dim(3)) {
    fail(ErrorCode::kShapeMismatch, "conv2d: input " + shape_to_string(input.shape()) + " incompatible with weight " +
                                        shape_to_string(weight.shape()));
  }
  Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), stride,
                   padding};
  if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel) {
    fail(ErrorCode::kShapeMismatch, "conv2d: kernel larger than padded input " + shape_to_string(input.shape()));
  }
  std::vector<float> out(at(g.output_size()));
  kernels::conv2d_forward(g, input.data(), weight.data(), out);
  return detail::make_result({g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out),
                             {input, weight}, [g, input, weight](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               if (!gi[0].empty()) kernels::conv2d_backward_input(g, dy, weight.data(), gi[0]);
                               if (!gi[1].empty()) kernels::conv2d_backward_weight(g, input.data(), dy, gi[1]);
                             });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, Mode mode, float momentum, float epsilon) {
  require_rank(input, 4, "batch_norm", "input");
  if (!(epsilon > 0.0f)) fail(ErrorCode::kInvalidArgument, "batch_norm: epsilon must be positive");
  const auto channels = input.dim(1);
  if (gamma.numel() != channels || beta.numel() != channels) {
    fail(ErrorCode::kShapeMismatch, "batch_norm: gamma/beta " + shape_to_string(gamma.shape()) + "/" +
                                        shape_to_string(beta.shape()) + " do not match input " +
                                        shape_to_string(input.shape()));
  }
  if (!running_mean.defined() || !running_var.defined() || running_mean.numel() != channels ||
      running_var.numel() != channels) {
    fail(ErrorCode::kUninitializedBuffer, "batch_norm: running buffers are not initialized for " +
                                              std::to_string(channels) + " channels");
  }
  BatchNormGeometry g{input.dim(0), channels, input.dim(2) * input.dim(3)};
  std::vector<float> mean(at(channels)), inv_std(at(channels));

  if (mode == Mode::kTrain) {
    std::vector<float> var(at(channels));
    kernels::batch_norm_statistics(g, input.data(), mean, var);
    const double count = static_cast<double>(g.batch * g.spatial);
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      inv_std[at(c)] = 1.0f / std::sqrt(var[at(c)] + epsilon);
      rm[at(c)] = (1.0f - momentum) * rm[at(c)] + momentum * mean[at(c)];
      rv[at(c)] = (1.0f - momentum) * rv[at(c)] + momentum * static_cast<float>(var[at(c)] * unbias);
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      mean[at(c)] = rm[at(c)];
      inv_std[at(c)] = 1.0f / std::sqrt(rv[at(c)] + epsilon);
    }
  }

  std::vector<float> out(at(g.size()));
  kernels::batch_norm_apply(g, input.data(), mean, inv_std, gamma.data(), beta.data(), out);
  return detail::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [g, mode, input, gamma, mean = std::move(mean), inv_std = std::move(inv_std)](
          std::span<const float> dy, std::span<std::vector<float>> gi) {
        if (mode == Mode::kTrain) {
          kernels::batch_norm_backward_train(g, input.data(), mean, inv_std, gamma.data(), dy, gi[0], gi[1], gi[2]);
        } else {
          kernels::batch_norm_backward_eval(g, input.data(), mean, inv_std, gamma.data(), dy, gi[0], gi[1], gi[2]);
        }
      });
}

Tensor relu(const Tensor& input) {
  const auto x = input.data();
  std::vector<float> out(x.size());
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[at(i)] = x[at(i)] > 0.0f ? x[at(i)] : 0.0f;
  return detail::make_result(input.shape(), std::move(out), {input},
                             [input](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               const auto x = input.data();
                               const auto n = static_cast<std::int64_t>(x.size());
                               auto& dx = gi[0];
#pragma omp parallel for schedule(static)
                               for (std::int64_t i = 0; i < n; ++i) {
                                 if (x[at(i)] > 0.0f) dx[at(i)] += dy[at(i)];
                               }
                             });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  if (input.dim(1) != weight.dim(1) || bias.numel() != weight.dim(0)) {
    fail(ErrorCode::kShapeMismatch, "linear: input " + shape_to_string(input.shape()) + ", weight " +
                                        shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()) +
                                        " are incompatible");
  }
  LinearGeometry g{input.dim(0), input.dim(1), weight.dim(0)};
  std::vector<float> out(at(g.batch * g.out_features));
  kernels::linear_forward(g, input.data(), weight.data(), bias.data(), out);
  return detail::make_result({g.batch, g.out_features}, std::move(out), {input, weight, bias},
                             [g, input, weight](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               kernels::linear_backward(g, input.data(), weight.data(), dy, gi[0], gi[1], gi[2]);
                             });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const auto rows = input.dim(0) * input.dim(1);
  const auto spatial = input.dim(2) * input.dim(3);
  const auto x = input.data();
  std::vector<float> out(at(rows));
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    for (std::int64_t s = 0; s < spatial; ++s) acc += x[at(r * spatial + s)];
    out[at(r)] = acc / static_cast<float>(spatial);
  }
  return detail::make_result({input.dim(0), input.dim(1)}, std::move(out), {input},
                             [rows, spatial](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               const float inv = 1.0f / static_cast<float>(spatial);
#pragma omp parallel for schedule(static)
                               for (std::int64_t r = 0; r < rows; ++r) {
                                 const float v = dy[at(r)] * inv;
                                 for (std::int64_t s = 0; s < spatial; ++s) gi[0][at(r * spatial + s)] += v;
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kShapeMismatch,
         "add: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) + " differ");
  }
  const auto x = a.data();
  const auto y = b.data();
  std::vector<float> out(x.size());
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[at(i)] = x[at(i)] + y[at(i)];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               for (auto& g : gi) {
                                 if (g.empty()) continue;
                                 for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
                               }
                             });
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  return detail::make_result({}, {static_cast<float>(acc)}, {input},
                             [](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               for (auto& v : gi[0]) v += dy[0];
                             });
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) fail(ErrorCode::kInvalidArgument, "mean_of: no inputs");
  double acc = 0.0;
  for (const auto& s : scalars) acc += s.item();
  const float inv = 1.0f / static_cast<float>(scalars.size());
  return detail::make_result({}, {static_cast<float>(acc / static_cast<double>(scalars.size()))}, scalars,
                             [inv](std::span<const float> dy, std::span<std::vector<float>> gi) {
                               for (auto& g : gi) {
                                 if (!g.empty()) g[0] += dy[0] * inv;
                               }
                             });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const auto n = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    fail(ErrorCode::kShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                        std::to_string(n) + " rows");
  }
  const auto z = logits.data();
  std::vector<float> probs(at(n * classes));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto label = labels[at(i)];
    if (label < 0 || label >= classes) {
      fail(ErrorCode::kOutOfRange, "cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                       std::to_string(classes) + ")");
    }
    const float* row = z.data() + i * classes;
    const float peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c]) - peak);
    const double log_denom = std::log(denom);
    for (std::int64_t c = 0; c < classes; ++c) {
      probs[at(i * classes + c)] = static_cast<float>(std::exp(static_cast<double>(row[c]) - peak - log_denom));
    }
    total += log_denom - (static_cast<double>(row[label]) - peak);
  }
  std::vector<std::int32_t> targets(labels.begin(), labels.end());
  return detail::make_result(
      {}, {static_cast<float>(total / static_cast<double>(n))}, {logits},
      [n, classes, probs = std::move(probs), targets = std::move(targets)](std::span<const float> dy,
                                                                            std::span<std::vector<float>> gi) {
        const float scale = dy[0] / static_cast<float>(n);
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t c = 0; c < classes; ++c) {
            const float onehot = c == targets[at(i)] ? 1.0f : 0.0f;
            gi[0][at(i * classes + c)] += scale * (probs[at(i * classes + c)] - onehot);
          }
        }
      });
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows", "logits");
  const auto n = logits.dim(0), classes = logits.dim(1);
  const auto z = logits.data();
  std::vector<std::int32_t> out(at(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = z.data() + i * classes;
    out[at(i)] = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

}  // namespace odn
