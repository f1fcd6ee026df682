#ifndef VIBENCH_FLOWS_HPP
#define VIBENCH_FLOWS_HPP

#include <vector>

#include "vibench/families.hpp"

namespace vibench {

/// Stack of planar layers z' = z + u_hat tanh(w'z + b) over a standard
/// Gaussian base. Layer parameters are laid out as (u, w, b), K = L(2D+1).
///
/// u_hat = u + (softplus(w'u + c0) - 1 - w'u) w / |w|^2 with
/// c0 = log(e - 1), which keeps u_hat'w >= -1 (invertibility) and maps u = 0
/// to u_hat = 0 so zero-u parameters give the identity flow.
class PlanarFlow final : public Family {
 public:
  PlanarFlow(int dim, int layers);

  FamilyKind kind() const override { return FamilyKind::PlanarFlow; }
  int num_params() const override { return layers_ * (2 * dim() + 1); }
  int layers() const { return layers_; }

  Vector initial_params(std::uint64_t seed) const override;
  double forward(const Vector& lambda, const Vector& eps,
                 Vector& theta) const override;
  Vector backward(const Vector& lambda, const Vector& eps,
                  const Vector& cot_theta, double cot_logdet) const override;

  /// No closed-form inverse; score-function estimators are unavailable.
  bool supports_score() const override { return false; }
  Vector score_grad_logq(const Vector& lambda,
                         const Vector& theta) const override;

  /// The constrained u_hat of layer `l`.
  Vector constrained_u(const Vector& lambda, int l) const;

 private:
  int layers_;
};

/// Small fully connected tanh network: in -> hidden -> hidden -> out.
/// Parameters are read from a contiguous slice of lambda in the order
/// W1, b1, W2, b2, W3, b3 (weights row-major).
struct CouplingNet {
  int in = 0;
  int hidden = 0;
  int out = 0;
  int offset = 0;

  int size() const {
    return hidden * in + hidden + hidden * hidden + hidden + out * hidden + out;
  }
};

/// RealNVP-style affine coupling flow over a standard Gaussian base.
/// Layer l transforms a contiguous half-block of coordinates:
///   x_T' = x_T * exp(s(x_C)) + t(x_C),  s = tanh(net_s(x_C)),
/// alternating between the leading and trailing block.
class NvpFlow final : public Family {
 public:
  NvpFlow(int dim, int layers, int hidden, double init_sd);

  FamilyKind kind() const override { return FamilyKind::NVPFlow; }
  int num_params() const override { return num_params_; }

  Vector initial_params(std::uint64_t seed) const override;
  double forward(const Vector& lambda, const Vector& eps,
                 Vector& theta) const override;
  Vector backward(const Vector& lambda, const Vector& eps,
                  const Vector& cot_theta, double cot_logdet) const override;

  bool has_inverse() const override { return true; }
  Vector inverse(const Vector& lambda, const Vector& theta) const override;
  Vector score_grad_logq(const Vector& lambda,
                         const Vector& theta) const override;

  struct Layer {
    std::vector<int> transformed;
    std::vector<int> conditioner;
    CouplingNet scale;
    CouplingNet shift;
  };
  const std::vector<Layer>& coupling_layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
  int num_params_ = 0;
  double init_sd_;
};

}  // namespace vibench

#endif
