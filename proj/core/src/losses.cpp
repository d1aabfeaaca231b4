#include "mpls/losses.hpp"

#include <stdexcept>
#include <string>

namespace mpls {

namespace F = torch::nn::functional;
using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

void LossConfig::validate() const {
  if (alpha_b < 0.0 || alpha_d < 0.0) throw std::invalid_argument("loss: alpha_b and alpha_d must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("loss: eps must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("loss: threshold must lie in (0, 1)");
  if (w_c < 0.0) throw std::invalid_argument("loss: w_c must be >= 0");
}

namespace {

void check_shapes(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
  }
  if (a.dim() < 1) throw std::invalid_argument(std::string(who) + ": expected a batch dimension");
}

torch::Tensor per_sample_sum(const torch::Tensor& t) { return t.reshape({t.size(0), -1}).sum(1); }

torch::Tensor bce_terms(const torch::Tensor& x, const torch::Tensor& y, double w_c) {
  // log sigmoid(x) = -softplus(-x), log(1 - sigmoid(x)) = -softplus(x)
  return w_c * y * F::softplus(-x) + (1 - y) * F::softplus(x);
}

struct CompoundLoss : public torch::autograd::Function<CompoundLoss> {
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor x, torch::Tensor y, double alpha_b,
                               double alpha_d, double w_c, double eps) {
    const auto p = torch::sigmoid(x);
    const auto bce = bce_terms(x, y, w_c).mean();
    const auto inter = per_sample_sum(p * y);
    const auto s = per_sample_sum(p) + per_sample_sum(y);
    const auto dice = ((2 * inter + eps) / (s + eps)).mean();
    ctx->save_for_backward({p, y, inter, s});
    ctx->saved_data["alpha_b"] = alpha_b;
    ctx->saved_data["alpha_d"] = alpha_d;
    ctx->saved_data["w_c"] = w_c;
    ctx->saved_data["eps"] = eps;
    return alpha_b * bce + alpha_d * (1 - dice);
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    const auto& p = saved[0];
    const auto& y = saved[1];
    const auto& inter = saved[2];
    const auto& s = saved[3];
    const double alpha_b = ctx->saved_data["alpha_b"].toDouble();
    const double alpha_d = ctx->saved_data["alpha_d"].toDouble();
    const double w_c = ctx->saved_data["w_c"].toDouble();
    const double eps = ctx->saved_data["eps"].toDouble();
    const auto n = static_cast<double>(p.numel());
    const auto batch = p.size(0);

    const auto g_bce = (-w_c * y * (1 - p) + (1 - y) * p) / n;

    std::vector<std::int64_t> bshape(static_cast<std::size_t>(p.dim()), 1);
    bshape[0] = batch;
    const auto sd = (s + eps).reshape(bshape);
    const auto id = inter.reshape(bshape);
    const auto d_dice_dp = (2 * y * sd - (2 * id + eps)) / (sd * sd);
    const auto g_dice = -d_dice_dp * p * (1 - p) / static_cast<double>(batch);

    auto grad = (alpha_b * g_bce + alpha_d * g_dice) * grad_out[0];
    return {grad, torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& target, double w_c) {
  check_shapes(logits, target, "bce_loss");
  return bce_terms(logits, target.to(logits.dtype()), w_c).mean();
}

torch::Tensor dice_coeff(const torch::Tensor& probs, const torch::Tensor& target, double eps) {
  check_shapes(probs, target, "dice_coeff");
  const auto y = target.to(probs.dtype());
  const auto inter = per_sample_sum(probs * y);
  const auto s = per_sample_sum(probs) + per_sample_sum(y);
  auto d = (2 * inter + eps) / (s + eps);
  if (eps == 0.0) d = torch::where(s == 0, torch::ones_like(d), d);
  return d.mean();
}

torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& target, double eps) {
  return 1 - dice_coeff(torch::sigmoid(logits), target, eps);
}

torch::Tensor compound_loss(const torch::Tensor& logits, const torch::Tensor& target, const LossConfig& cfg) {
  check_shapes(logits, target, "compound_loss");
  cfg.validate();
  return CompoundLoss::apply(logits, target.to(logits.dtype()), cfg.alpha_b, cfg.alpha_d, cfg.w_c, cfg.eps);
}

}  // namespace mpls
