#include "stlt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "stlt/losses.hpp"
#include "stlt/mixer.hpp"
#include "stlt/rng.hpp"
#include "stlt/tape.hpp"

namespace stlt {

std::vector<double> finite_diff_oracle(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, double h_base) {
  std::vector<double> grad(theta.size());
  std::vector<double> probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double h = h_base * std::max(1.0, std::fabs(theta[i]));
    probe[i] = theta[i] + h;
    const double fp = f(probe);
    probe[i] = theta[i] - h;
    const double fm = f(probe);
    probe[i] = theta[i];
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double rel_error(double analytic, double fd) {
  const double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-8});
  return std::fabs(analytic - fd) / denom;
}

namespace {

// Parameter group for aggregation: strip the layer index, keep the role.
std::string group_of(const std::string& name) {
  const std::size_t dot = name.find('.');
  if (dot == std::string::npos) return name;
  std::string head = name.substr(0, dot);
  while (!head.empty() && std::isdigit(static_cast<unsigned char>(head.back())))
    head.pop_back();
  return head + "." + name.substr(dot + 1);
}

struct TinySetup {
  ModelParams model;
  std::vector<int> tokens;
  std::uint64_t mask_seed;
  RegWeights reg;
};

TinySetup make_tiny(std::uint64_t seed) {
  TinySetup s;
  BankInit bi;
  bi.sigma_min = 0.05;  // keep decay moderate so no gradient is lost in noise
  bi.sigma_max = 2.0;
  bi.omega_max = 1.5;
  bi.t_init = 4.3;
  s.model = init_lm_model(8, 8, 16, 8, 2, 4, bi, seed);
  Rng rng(substream(seed, 0x746f6b));
  s.tokens.resize(8);
  for (int& t : s.tokens) t = static_cast<int>(rng.next_u64() % 8);
  s.mask_seed = substream(seed, 0x667a);
  s.reg.lambda_omega = 1e-2;
  s.reg.lambda_sigma = 1e-2;
  s.reg.lambda_mask = 1e-2;
  return s;
}

// Training objective (task cross-entropy plus regularizers) as a scalar
// function of the flattened parameter vector.
double tiny_objective(TinySetup& s, MixerOptions opts, Tape* grad_tape,
                      ModelBinding* out_binding) {
  Tape local;
  Tape& t = grad_tape ? *grad_tape : local;
  ModelBinding b = bind_model(t, s.model, grad_tape != nullptr);
  LmTrace trace;
  Tape::Id logits = forward_lm_graph(t, s.model, b, s.tokens, opts, &trace);
  std::vector<int> targets(s.tokens.begin() + 1, s.tokens.end());
  targets.push_back(s.tokens.front());
  Tape::Id ce = t.softmax_cross_entropy(logits, targets);
  std::vector<std::pair<Tape::Id, double>> terms{{ce, 1.0}};
  for (const BlockTrace& bt : trace.blocks) {
    terms.emplace_back(t.abs_weighted_sum(bt.omega, bt.m_tilde), s.reg.lambda_omega);
    terms.emplace_back(t.sigma_smoothness(bt.sigma_eff, bt.m_tilde), s.reg.lambda_sigma);
    terms.emplace_back(t.sum(bt.m_tilde), s.reg.lambda_mask);
  }
  Tape::Id loss = t.weighted_sum(terms);
  if (grad_tape) {
    t.backward(loss);
    if (out_binding) *out_binding = std::move(b);
  }
  return t.val(loss)[0];
}

}  // namespace

GradCheckReport gradcheck_tiny_models(int n_models, std::uint64_t seed) {
  GradCheckReport report;
  report.models = n_models;
  std::vector<GradCheckGroup> groups;
  auto find_group = [&](const std::string& g) -> GradCheckGroup& {
    for (GradCheckGroup& e : groups)
      if (e.name == g) return e;
    groups.push_back({g, 0.0, 0.0, 0});
    return groups.back();
  };

  for (int m = 0; m < n_models; ++m) {
    TinySetup setup = make_tiny(substream(seed, 0x6d6f64, m));
    MixerOptions opts;
    opts.mask_mode = MaskMode::stochastic;
    opts.lambda_t = 1.0;
    opts.mask_seed = setup.mask_seed;

    Tape t;
    ModelBinding binding;
    tiny_objective(setup, opts, &t, &binding);

    std::vector<ParamSlot> slots = param_slots(setup.model);
    std::vector<double> theta;
    for (const ParamSlot& s : slots)
      theta.insert(theta.end(), s.data, s.data + s.size());

    auto f = [&](const std::vector<double>& th) {
      std::size_t off = 0;
      for (ParamSlot& s : slots) {
        std::copy_n(th.data() + off, s.size(), s.data);
        off += s.size();
      }
      return tiny_objective(setup, opts, nullptr, nullptr);
    };
    const std::vector<double> fd = finite_diff_oracle(f, theta, report.h_base);
    f(theta);  // restore parameters

    std::size_t off = 0;
    for (std::size_t si = 0; si < slots.size(); ++si) {
      const Tensor* g = t.grad_ptr(binding.ids[si]);
      GradCheckGroup& grp = find_group(group_of(slots[si].name));
      for (std::size_t i = 0; i < slots[si].size(); ++i) {
        const double ga = g ? (*g)[i] : 0.0;
        const double r = rel_error(ga, fd[off + i]);
        grp.max_rel = std::max(grp.max_rel, r);
        grp.mean_rel += r;
        grp.count += 1;
        report.max_rel = std::max(report.max_rel, r);
      }
      off += slots[si].size();
    }
  }
  for (GradCheckGroup& g : groups)
    if (g.count > 0) g.mean_rel /= static_cast<double>(g.count);
  std::sort(groups.begin(), groups.end(),
            [](const GradCheckGroup& a, const GradCheckGroup& b) {
              return a.name < b.name;
            });
  report.groups = std::move(groups);
  return report;
}

void print_gradcheck(const GradCheckReport& report, std::ostream& os) {
  os << "gradcheck: " << report.models << " models, h_base=" << report.h_base
     << "\n";
  os << std::left << std::setw(24) << "group" << std::right << std::setw(14)
     << "max_rel" << std::setw(14) << "mean_rel" << std::setw(10) << "count"
     << "\n";
  for (const GradCheckGroup& g : report.groups) {
    os << std::left << std::setw(24) << g.name << std::right << std::setw(14)
       << std::scientific << std::setprecision(3) << g.max_rel << std::setw(14)
       << g.mean_rel << std::setw(10) << g.count << "\n";
  }
  os << "overall max_rel=" << std::scientific << std::setprecision(3)
     << report.max_rel << std::defaultfloat << "\n";
}

}  // namespace stlt
