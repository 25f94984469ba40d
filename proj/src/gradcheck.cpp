#include "evtrack/gradcheck.hpp"

#include <cmath>

namespace evtrack::ad {

double grad_check(const std::function<TensorPtr(Tape&)>& f,
                  const std::vector<TensorPtr>& wiggle, double step) {
  for (const auto& t : wiggle) {
    if (!t->requires_grad) throw ContractError("grad_check: tensor does not require grad");
    t->zero_grad();
  }
  {
    Tape tape;
    auto loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wiggle.size());
  for (const auto& t : wiggle) analytic.push_back(t->grad);

  auto eval = [&]() {
    Tape tape;
    return f(tape)->values[0];
  };

  double max_rel = 0.0;
  for (size_t wi = 0; wi < wiggle.size(); ++wi) {
    auto& vals = wiggle[wi]->values;
    for (size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = eval();
      vals[i] = saved - step;
      const double down = eval();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(analytic[wi][i] - numeric) /
                         std::max(1e-8, std::abs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace evtrack::ad
