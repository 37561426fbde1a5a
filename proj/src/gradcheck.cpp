#include "dcc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dcc {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_scalar(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant_ref(t));
  const Var<double> y = f(tape, vars);
  if (y.value().size() != 1) throw ShapeError("gradcheck: function output is not scalar");
  return y.value()[0];
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t limit) {
  std::vector<std::size_t> idx;
  if (limit == 0 || size <= limit) {
    for (std::size_t i = 0; i < size; ++i) idx.push_back(i);
  } else {
    for (std::size_t i = 0; i < limit; ++i) idx.push_back(i * size / limit);
  }
  return idx;
}

}  // namespace

std::vector<InputCheck> check_function(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double step) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.input(t));
  tape.backward(f(tape, vars));

  std::vector<Tensor<double>> probe = inputs;
  std::vector<InputCheck> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& g = tape.grad(vars[i]);
    for (std::size_t e = 0; e < probe[i].size(); ++e) {
      const double orig = probe[i][e];
      probe[i][e] = orig + step;
      const double up = eval_scalar(f, probe);
      probe[i][e] = orig - step;
      const double down = eval_scalar(f, probe);
      probe[i][e] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = g.empty() ? 0.0 : g[e];
      out[i].max_rel_error = std::max(out[i].max_rel_error, relative_error(analytic, numeric));
      ++out[i].checked;
    }
  }
  return out;
}

GradcheckReport gradcheck_model(Model<double>& model, const Tensor<double>& x, std::span<const int> labels,
                                const GradcheckOptions& opt) {
  ParamStore<double>& params = model.params();
  std::vector<Tensor<double>> snapshot;
  for (ParamId id = 0; id < params.size(); ++id) snapshot.push_back(params.tensor(id));

  auto loss_at = [&](bool record, GradientFault fault) {
    Tape<double> tape;
    tape.set_grad_enabled(record);
    tape.set_fault(fault);
    Rng rng = Rng(opt.seed).split(streams::kDropout);
    const auto out = model.forward(tape, tape.constant_ref(x), Mode::kTrain, &rng);
    const Var<double> loss = model.loss(out, labels);
    const double value = loss.value()[0];
    if (record) tape.backward(loss);
    return value;
  };

  params.zero_grad();
  loss_at(true, opt.inject_fault);
  std::vector<std::vector<double>> analytic;
  for (ParamId id = 0; id < params.size(); ++id) analytic.push_back(params.tensor(id).grad());
  params.zero_grad();

  GradcheckReport report;
  for (ParamId id = 0; id < params.size(); ++id) {
    if (!is_trainable(params.kind(id))) continue;
    GroupResult group;
    group.name = params.name(id);
    Tensor<double>& p = params.tensor(id);
    for (std::size_t e : probe_indices(p.size(), opt.max_elements_per_group)) {
      const double orig = p[e];
      p[e] = orig + opt.step;
      const double up = loss_at(false, GradientFault::kNone);
      p[e] = orig - opt.step;
      const double down = loss_at(false, GradientFault::kNone);
      p[e] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double a = analytic[id].empty() ? 0.0 : analytic[id][e];
      group.max_rel_error = std::max(group.max_rel_error, relative_error(a, numeric));
      ++group.checked;
    }
    group.passed = group.max_rel_error < opt.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.passed = report.passed && group.passed;
    report.groups.push_back(std::move(group));
  }

  // Train-mode forwards moved the running statistics; put everything back.
  for (ParamId id = 0; id < params.size(); ++id) {
    params.tensor(id).values() = snapshot[id].values();
    params.tensor(id).clear_grad();
  }
  return report;
}

}  // namespace dcc
