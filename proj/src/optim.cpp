#include "dode/optim.hpp"

#include <cmath>

#include "dode/errors.hpp"

namespace dode {

void AdamConfig::validate() const {
  if (!(lr >= 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0) || !(weight_decay >= 0))
    throw InvalidInput("adamw_step: optimizer hyperparameters out of range");
}

bool adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& st, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw InvalidInput("adamw_step: gradient/parameter size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) {
      ++st.skipped;
      return false;
    }
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1 - cfg.beta1) * grads[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1 - cfg.beta2) * grads[i] * grads[i];
    const double mh = st.m[i] / bc1, vh = st.v[i] / bc2;
    params[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    params[i] *= decay;
  }
  return true;
}

void ema_update(std::vector<double>& ema, const std::vector<double>& params, double rate) {
  if (!(rate >= 0 && rate < 1)) throw InvalidInput("ema_update: rate must be in [0,1)");
  if (ema.size() != params.size()) throw InvalidInput("ema_update: size mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = rate * ema[i] + (1 - rate) * params[i];
}

}  // namespace dode
