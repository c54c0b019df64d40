#include "her/data.hpp"

#include "her/error.hpp"

#include <random>

namespace her {

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.identities < 1 || spec.images_per_view < 1 || spec.dim < 1)
    fail(ErrorCode::invalid_parameter, "synthetic counts must all be >= 1");
  if (spec.identity_spread < 0.0 || spec.view_shift < 0.0 || spec.noise < 0.0)
    fail(ErrorCode::invalid_parameter, "synthetic spreads must be non-negative");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = spec.dim;
  auto draw = [&](Eigen::Ref<Eigen::VectorXd> v) {
    for (Index i = 0; i < d; ++i) v(i) = normal(rng);
  };

  Eigen::VectorXd shift(d);
  draw(shift);
  const double norm = shift.norm();
  shift *= norm > 0.0 ? spec.view_shift / norm : 0.0;

  const Index s = spec.images_per_view;
  const Index n = spec.identities * s;
  SyntheticData out;
  out.probe.values.resize(d, n);
  out.gallery.values.resize(d, n);
  Eigen::VectorXd center(d);
  Eigen::VectorXd noise(d);
  for (Index j = 0; j < spec.identities; ++j) {
    draw(center);
    center *= spec.identity_spread;
    const auto label = static_cast<IdentityId>(j + 1);
    for (Index k = 0; k < s; ++k) {
      draw(noise);
      out.probe.values.col(j * s + k) = center + spec.noise * noise;
      out.probe.labels.push_back(label);
      out.probe.views.push_back(View::probe);
    }
    for (Index k = 0; k < s; ++k) {
      draw(noise);
      out.gallery.values.col(j * s + k) = center + shift + spec.noise * noise;
      out.gallery.labels.push_back(label);
      out.gallery.views.push_back(View::gallery);
    }
  }
  return out;
}

}  // namespace her
