#include "lcm/lora.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lcm/errors.hpp"

namespace lcm {

const LoraEntry* LoraAdapter::find(std::string_view layer) const {
  const auto it = entries_.find(layer);
  return it == entries_.end() ? nullptr : &it->second;
}

void LoraAdapter::insert(std::string layer, LoraEntry entry) {
  if (entries_.contains(layer)) {
    throw InvalidArgument("adapter already has an entry for '" + layer + "'");
  }
  if (entry.rank == 0) throw InvalidArgument("LoRA rank must be at least 1");
  if (entry.a.ndim() != 2 || entry.b.ndim() != 2 || entry.a.rows() != entry.rank ||
      entry.b.cols() != entry.rank) {
    throw DimensionError("LoRA factors for '" + layer + "' do not match rank " +
                         std::to_string(entry.rank) + ": A " + shape_string(entry.a.shape()) +
                         ", B " + shape_string(entry.b.shape()));
  }
  entries_.emplace(std::move(layer), std::move(entry));
}

std::vector<Tensor> LoraAdapter::factors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size() * 2);
  for (const auto& [name, e] : entries_) {
    out.push_back(e.a);
    out.push_back(e.b);
  }
  return out;
}

void LoraAdapter::set_trainable(bool on) {
  for (auto& [name, e] : entries_) {
    e.a.set_requires_grad(on);
    e.b.set_requires_grad(on);
  }
}

LoraAdapter LoraAdapter::clone() const {
  LoraAdapter copy;
  copy.base_fingerprint_ = base_fingerprint_;
  for (const auto& [name, e] : entries_) {
    copy.entries_.emplace(name, LoraEntry{e.a.clone(), e.b.clone(), e.rank, e.scale});
  }
  return copy;
}

std::vector<std::string> default_lora_targets(const DenoiserNet& net) {
  std::vector<std::string> out;
  for (const auto& p : net.parameters()) {
    if (p.name.ends_with(".weight")) out.push_back(p.name);
  }
  return out;
}

LoraAdapter attach(DenoiserNet& net, const LoraSpec& spec, Rng& rng) {
  const bool defaults = spec.targets.empty();
  const std::vector<std::string> targets = defaults ? default_lora_targets(net) : spec.targets;
  if (spec.rank == 0) throw InvalidArgument("LoRA rank must be at least 1");
  std::set<std::string> seen;
  LoraAdapter adapter;
  for (const auto& name : targets) {
    if (!seen.insert(name).second) {
      throw InvalidArgument("LoRA attached twice to layer '" + name + "'");
    }
    if (!name.ends_with(".weight")) {
      throw InvalidArgument("LoRA target '" + name + "' is not a dense weight matrix");
    }
    const Tensor& w = net.param(name);
    const std::size_t d = w.rows(), k = w.cols();
    // Default placement caps the rank at min(d, k) for narrow layers such as
    // the 2-wide output; explicitly named targets must fit as requested.
    const std::size_t rank = defaults ? std::min(spec.rank, std::min(d, k)) : spec.rank;
    if (rank > std::min(d, k)) {
      throw InvalidArgument("LoRA rank " + std::to_string(spec.rank) + " exceeds min(d, k) = " +
                            std::to_string(std::min(d, k)) + " for '" + name + "'");
    }
    const double stddev = std::sqrt(1.0 / static_cast<double>(rank));
    std::vector<Scalar> a(rank * k);
    for (auto& v : a) v = static_cast<Scalar>(stddev * rng.normal());
    adapter.insert(name, LoraEntry{Tensor(Shape{rank, k}, std::move(a)), Tensor::zeros(Shape{d, rank}),
                                   rank, spec.scale});
  }
  net.set_trainable(false);
  adapter.set_base_fingerprint(net.fingerprint());
  return adapter;
}

std::size_t count_trainable(const LoraAdapter& adapter) {
  std::size_t total = 0;
  for (const auto& [name, e] : adapter.entries()) total += e.rank * (e.b.rows() + e.a.cols());
  return total;
}

Tensor materialize(const LoraEntry& e) {
  const std::size_t d = e.b.rows(), k = e.a.cols(), r = e.rank;
  const auto a = e.a.data();
  const auto b = e.b.data();
  std::vector<Scalar> out(d * k, Scalar(0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      Scalar acc = 0;
      for (std::size_t q = 0; q < r; ++q) acc += b[i * r + q] * a[q * k + j];
      out[i * k + j] = static_cast<Scalar>(e.scale) * acc;
    }
  }
  return Tensor(Shape{d, k}, std::move(out));
}

std::map<std::string, Tensor> materialize(const LoraAdapter& adapter) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, e] : adapter.entries()) out.emplace(name, materialize(e));
  return out;
}

void check_compatible(const DenoiserNet& base, const LoraAdapter& adapter) {
  const std::string fp = base.fingerprint();
  if (!adapter.base_fingerprint().empty() && adapter.base_fingerprint() != fp) {
    throw IncompatibleError("adapter was built for architecture " + adapter.base_fingerprint() +
                            " but base network is " + fp);
  }
  for (const auto& [name, e] : adapter.entries()) {
    if (!base.has_param(name)) {
      throw IncompatibleError("adapter targets '" + name + "', absent from base architecture " + fp);
    }
    const Tensor& w = base.param(name);
    if (w.ndim() != 2 || w.rows() != e.b.rows() || w.cols() != e.a.cols()) {
      throw DimensionError("adapter entry '" + name + "' (" + std::to_string(e.b.rows()) + "x" +
                           std::to_string(e.a.cols()) + ") does not fit layer shape " +
                           shape_string(w.shape()));
    }
  }
}

DenoiserNet merge(const DenoiserNet& base, const LoraAdapter& adapter) {
  check_compatible(base, adapter);
  std::vector<NamedTensor> params;
  for (const auto& p : base.parameters()) {
    const LoraEntry* e = adapter.find(p.name);
    if (e == nullptr) {
      params.push_back({p.name, p.value.clone()});
      continue;
    }
    const Tensor delta = materialize(*e);
    std::vector<Scalar> values(p.value.data().begin(), p.value.data().end());
    const auto dv = delta.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += dv[i];
    params.push_back({p.name, Tensor(p.value.shape(), std::move(values))});
  }
  return DenoiserNet::from_parameters(base.config(), std::move(params));
}

std::string_view to_string(AdapterRole role) {
  switch (role) {
    case AdapterRole::kAcceleration: return "acceleration";
    case AdapterRole::kStyle: return "style";
    case AdapterRole::kCombined: return "combined";
  }
  return "unknown";
}

AdapterRole parse_adapter_role(std::string_view text) {
  if (text == "acceleration") return AdapterRole::kAcceleration;
  if (text == "style") return AdapterRole::kStyle;
  if (text == "combined") return AdapterRole::kCombined;
  throw InvalidArgument("unknown adapter role '" + std::string(text) + "'");
}

namespace {

// λ·s·B, returned as a fresh tensor.
Tensor scaled_b(const LoraEntry& e, double lambda) {
  std::vector<Scalar> values(e.b.data().begin(), e.b.data().end());
  const auto factor = static_cast<Scalar>(lambda * e.scale);
  for (auto& v : values) v *= factor;
  return Tensor(e.b.shape(), std::move(values));
}

}  // namespace

AdapterBundle combine(const AdapterBundle& style, const AdapterBundle& accel, double lambda_style,
                      double lambda_accel) {
  const auto& fs = style.adapter.base_fingerprint();
  const auto& fa = accel.adapter.base_fingerprint();
  if (!fs.empty() && !fa.empty() && fs != fa) {
    throw IncompatibleError("style adapter targets architecture " + fs +
                            " but acceleration adapter targets " + fa);
  }
  LoraAdapter out;
  out.set_base_fingerprint(fs.empty() ? fa : fs);

  std::set<std::string> names;
  for (const auto& [n, e] : style.adapter.entries()) names.insert(n);
  for (const auto& [n, e] : accel.adapter.entries()) names.insert(n);

  for (const auto& name : names) {
    const LoraEntry* s = style.adapter.find(name);
    const LoraEntry* a = accel.adapter.find(name);
    if (s != nullptr && a != nullptr) {
      if (s->b.rows() != a->b.rows() || s->a.cols() != a->a.cols()) {
        throw DimensionError("cannot combine '" + name + "': layer dims " +
                             std::to_string(s->b.rows()) + "x" + std::to_string(s->a.cols()) +
                             " vs " + std::to_string(a->b.rows()) + "x" +
                             std::to_string(a->a.cols()));
      }
      const std::size_t d = s->b.rows(), k = s->a.cols();
      const std::size_t r = s->rank + a->rank;
      // A = [A_style ; A_accel]
      std::vector<Scalar> av;
      av.reserve(r * k);
      av.insert(av.end(), s->a.data().begin(), s->a.data().end());
      av.insert(av.end(), a->a.data().begin(), a->a.data().end());
      // B = [λ₁s₁B_style | λ₂s₂B_accel]
      const Tensor bs = scaled_b(*s, lambda_style);
      const Tensor ba = scaled_b(*a, lambda_accel);
      std::vector<Scalar> bv(d * r);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t q = 0; q < s->rank; ++q) bv[i * r + q] = bs.data()[i * s->rank + q];
        for (std::size_t q = 0; q < a->rank; ++q) bv[i * r + s->rank + q] = ba.data()[i * a->rank + q];
      }
      out.insert(name, LoraEntry{Tensor(Shape{r, k}, std::move(av)), Tensor(Shape{d, r}, std::move(bv)),
                                 r, 1.0});
    } else {
      const LoraEntry* only = s != nullptr ? s : a;
      const double lambda = s != nullptr ? lambda_style : lambda_accel;
      out.insert(name, LoraEntry{only->a.clone(), scaled_b(*only, lambda), only->rank, 1.0});
    }
  }

  AdapterBundle bundle;
  bundle.adapter = std::move(out);
  bundle.role = AdapterRole::kCombined;
  bundle.name = "combined(" + style.name + "," + accel.name + ")";
  bundle.provenance = CombineProvenance{lambda_style, lambda_accel, style.name, accel.name};
  return bundle;
}

}  // namespace lcm
