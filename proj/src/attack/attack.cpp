#include "aegis/attack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "aegis/core/errors.hpp"
#include "aegis/core/parallel.hpp"

namespace aegis::attack {

using nlohmann::json;

PerturbationBox PerturbationBox::uniform(double epsilon, std::vector<std::size_t> filter) {
  PerturbationBox b;
  b.epsilon = epsilon;
  b.half_widths = Vector::Constant(static_cast<Eigen::Index>(filter.size()), epsilon);
  b.filter = std::move(filter);
  return b;
}

PerturbationBox PerturbationBox::all_dims(double epsilon, std::size_t state_dim) {
  return uniform(epsilon, attack::all_dims(state_dim));
}

PerturbationBox PerturbationBox::from_init_box(const Box& init_box, const Box& safety_box,
                                               std::vector<std::size_t> filter, double margin_fraction) {
  if (init_box.dim() != safety_box.dim()) throw DimensionError("init and safety boxes differ in size");
  PerturbationBox b;
  b.half_widths.resize(static_cast<Eigen::Index>(filter.size()));
  for (std::size_t i = 0; i < filter.size(); ++i) {
    if (filter[i] >= init_box.dim()) throw DimensionError("filter index out of range");
    b.half_widths[static_cast<Eigen::Index>(i)] = 0.5 * init_box.width()[static_cast<Eigen::Index>(filter[i])];
  }
  b.epsilon = b.half_widths.size() ? b.half_widths.maxCoeff() : 0.0;
  b.clip = clip_region(safety_box, margin_fraction);
  b.filter = std::move(filter);
  return b;
}

Box clip_region(const Box& safety_box, double margin_fraction) {
  if (!(margin_fraction >= 0.0 && margin_fraction < 0.5)) throw ConfigError("margin fraction must lie in [0, 0.5)");
  const Vector margin = margin_fraction * safety_box.width();
  return Box(safety_box.lower() + margin, safety_box.upper() - margin);
}

void PerturbationBox::validate(std::size_t state_dim) const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and non-negative");
  if (static_cast<std::size_t>(half_widths.size()) != filter.size()) {
    throw DimensionError("half widths do not match the filter");
  }
  std::vector<std::size_t> sorted = filter;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("filter indices must be unique");
  }
  for (auto f : filter) {
    if (f >= state_dim) throw DimensionError("filter index " + std::to_string(f) + " out of range");
  }
  if (filter.size() && (half_widths.array() < 0.0).any()) throw ConfigError("negative half width");
  if (clip && clip->dim() != state_dim) throw DimensionError("clip box has the wrong dimension");
}

Box PerturbationBox::offset_box(const State& s) const {
  const auto n = static_cast<Eigen::Index>(filter.size());
  Vector lo = -half_widths, hi = half_widths;
  if (clip) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto d = static_cast<Eigen::Index>(filter[static_cast<std::size_t>(i)]);
      lo[i] = std::max(lo[i], clip->lower()[d] - s[d]);
      hi[i] = std::min(hi[i], clip->upper()[d] - s[d]);
      // s itself outside the clip box: pin the offset to the nearest admissible value
      if (lo[i] > hi[i]) lo[i] = hi[i] = std::clamp(0.0, hi[i], lo[i]);
    }
  }
  return Box(lo, hi);
}

std::vector<std::size_t> all_dims(std::size_t state_dim) {
  std::vector<std::size_t> f(state_dim);
  for (std::size_t i = 0; i < state_dim; ++i) f[i] = i;
  return f;
}

State perturb(const State& s, const PerturbationBox& box, const Vector& offsets) {
  if (static_cast<std::size_t>(offsets.size()) != box.filter.size()) {
    throw DimensionError("offsets do not match the filter size");
  }
  State out = s;
  for (std::size_t i = 0; i < box.filter.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (!(std::abs(offsets[k]) <= box.half_widths[k] * (1.0 + 1e-12))) {
      throw ConfigError("offset " + std::to_string(offsets[k]) + " outside the perturbation box");
    }
    if (box.filter[i] >= static_cast<std::size_t>(s.size())) throw DimensionError("filter index out of range");
    out[static_cast<Eigen::Index>(box.filter[i])] += offsets[k];
  }
  return out;
}

std::vector<State> AttackResult::adversarial_set() const {
  std::vector<State> out;
  for (const auto& r : records) {
    if (r.unsafe) out.push_back(r.perturbed);
  }
  return out;
}

std::vector<std::size_t> attacked_indices(std::size_t length, std::size_t stride) {
  if (stride == 0) throw ConfigError("attack stride must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < length; k += stride) idx.push_back(k);
  return idx;
}

AttackRecord evaluate_start(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                            const specdsl::SafetySpec& spec, const State& start,
                            const AttackOptions& options) {
  AttackRecord rec;
  rec.perturbed = start;
  envsim::RolloutOptions ro;
  ro.max_steps = options.rollout_steps;
  ro.stop = [&spec](const State& s) { return spec.reward(s) <= 0.0; };
  try {
    auto traj = envsim::rollout(env, policy, start, ro);
    rec.safety_reward = spec.reward(traj);
    rec.unsafe = rec.safety_reward <= 0.0;
    if (rec.unsafe) {
      rec.states = std::move(traj.states);
    } else if (options.record_state_stride == 0) {
      rec.states = {start};
    } else {
      rec.states = envsim::thin(traj, options.record_state_stride).states;
    }
  } catch (const NumericOverflowError&) {
    rec.numeric_failure = true;
    rec.safety_reward = std::numeric_limits<double>::quiet_NaN();
    rec.unsafe = false;
    rec.states = {start};
  }
  return rec;
}

namespace {

void check_inputs(const envsim::EnvModel& env, const specdsl::SafetySpec& spec, const PerturbationBox& box,
                  const envsim::Trajectory& base) {
  box.validate(env.state_dim());
  if (spec.required_dim() > env.state_dim()) throw DimensionError("spec references states beyond the plant");
  if (base.states.empty()) throw ConfigError("base trajectory is empty");
  for (const auto& s : base.states) {
    if (spec.reward(s) <= 0.0) throw ConfigError("base trajectory must be safe");
  }
}

AttackResult finish(std::vector<AttackRecord> records) {
  AttackResult res;
  res.records = std::move(records);
  for (auto& r : res.records) res.unsafe_count += r.unsafe ? 1 : 0;
  res.success_rate = res.records.empty() ? 0.0
                                         : static_cast<double>(res.unsafe_count) / static_cast<double>(res.records.size());
  return res;
}

}  // namespace

AttackResult random_attack(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                           const specdsl::SafetySpec& spec, const PerturbationBox& box,
                           const envsim::Trajectory& base, std::size_t n_samples, std::uint64_t seed,
                           const AttackOptions& options, std::size_t traj_id) {
  if (n_samples == 0) throw ConfigError("random attack needs at least one sample (rate undefined)");
  check_inputs(env, spec, box, base);
  const auto idx = attacked_indices(base.states.size(), options.stride);
  // draw all starts up front so results do not depend on worker scheduling
  Rng rng(seed);
  std::vector<std::size_t> ks(n_samples);
  std::vector<State> starts(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    ks[i] = idx[uniform_index(rng, idx.size())];
    const State& s = base.states[ks[i]];
    starts[i] = perturb(s, box, box.offset_box(s).sample(rng));
  }
  std::vector<AttackRecord> records(n_samples);
  parallel_for(
      n_samples,
      [&](std::size_t i) {
        auto rec = evaluate_start(env, policy, spec, starts[i], options);
        rec.traj_id = traj_id;
        rec.step_index = ks[i];
        rec.ordinal = i;
        rec.source = base.states[ks[i]];
        records[i] = std::move(rec);
      },
      options.workers);
  return finish(std::move(records));
}

AttackResult bo_attack(const envsim::EnvModel& env, const BlackBoxPolicy& policy,
                       const specdsl::SafetySpec& spec, const PerturbationBox& box,
                       const envsim::Trajectory& base, const gpopt::AcquisitionConfig& acq,
                       std::uint64_t seed, const AttackOptions& options, std::size_t traj_id) {
  acq.validate();
  check_inputs(env, spec, box, base);
  const auto idx = attacked_indices(base.states.size(), options.stride);
  std::vector<std::vector<AttackRecord>> slots(idx.size());
  parallel_for(
      idx.size(),
      [&](std::size_t j) {
        const std::size_t k = idx[j];
        const State& s = base.states[k];
        const Box obox = box.offset_box(s);
        // BO runs over the non-degenerate offset dimensions only
        std::vector<Eigen::Index> active;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(obox.dim()); ++i) {
          if (obox.width()[i] > 0.0) active.push_back(i);
        }
        const auto full_offsets = [&](const Vector& x) {
          Vector off = obox.lower();
          for (std::size_t a = 0; a < active.size(); ++a) off[active[a]] = x[static_cast<Eigen::Index>(a)];
          return off;
        };
        auto& out = slots[j];
        out.reserve(acq.budget());
        const auto objective = [&](const Vector& x) {
          auto rec = evaluate_start(env, policy, spec, perturb(s, box, full_offsets(x)), options);
          rec.traj_id = traj_id;
          rec.step_index = k;
          rec.ordinal = out.size();
          rec.source = s;
          const double y = rec.safety_reward;
          out.push_back(std::move(rec));
          return y;
        };
        if (active.empty()) {
          for (std::size_t e = 0; e < acq.budget(); ++e) objective(Vector());
          return;
        }
        Vector lo(static_cast<Eigen::Index>(active.size())), hi(lo.size());
        for (std::size_t a = 0; a < active.size(); ++a) {
          lo[static_cast<Eigen::Index>(a)] = obox.lower()[active[a]];
          hi[static_cast<Eigen::Index>(a)] = obox.upper()[active[a]];
        }
        gpopt::bo_minimize(objective, Box(lo, hi), acq, derive_seed(seed, k));
      },
      options.workers);
  std::vector<AttackRecord> records;
  for (auto& slot : slots) {
    for (auto& r : slot) records.push_back(std::move(r));
  }
  return finish(std::move(records));
}

AttackResult merge(std::vector<AttackResult> parts) {
  std::vector<AttackRecord> records;
  for (auto& p : parts) {
    for (auto& r : p.records) records.push_back(std::move(r));
  }
  return finish(std::move(records));
}

double select_epsilon(const envsim::EnvModel& env, const std::vector<PolicyPtr>& policies,
                      const specdsl::SafetySpec& spec, const EpsilonSearch& search, std::uint64_t seed) {
  if (policies.empty()) throw ConfigError("epsilon search needs at least one policy");
  if (!(search.start > 0.0) || !(search.step > 0.0) || search.n_sims == 0) {
    throw ConfigError("invalid epsilon search settings");
  }
  const auto filter = search.filter.empty() ? all_dims(env.state_dim()) : search.filter;
  AttackOptions opts;
  opts.record_state_stride = 0;
  for (std::size_t i = 0;; ++i) {
    const double eps = search.start + static_cast<double>(i) * search.step;
    if (eps > search.max_epsilon * (1.0 + 1e-12)) {
      throw ConfigError("no epsilon found up to " + std::to_string(search.max_epsilon));
    }
    auto box = PerturbationBox::uniform(eps, filter);
    box.clip = search.clip;
    bool all_found = true;
    for (std::size_t p = 0; p < policies.size() && all_found; ++p) {
      Rng rng(derive_seed(derive_seed(seed, i), p));
      bool found = false;
      for (std::size_t n = 0; n < search.n_sims && !found; ++n) {
        const State s0 = envsim::sample_initial(env, rng);
        const State start = perturb(s0, box, box.offset_box(s0).sample(rng));
        found = evaluate_start(env, *policies[p], spec, start, opts).unsafe;
      }
      all_found = found;
    }
    if (all_found) return eps;
  }
}

namespace {

json vec(const Vector& v) { return to_std(v); }

}  // namespace

void write_records_jsonl(std::ostream& out, const std::vector<AttackRecord>& records) {
  for (const auto& r : records) {
    json j;
    j["traj"] = r.traj_id;
    j["k"] = r.step_index;
    j["ordinal"] = r.ordinal;
    j["source"] = vec(r.source);
    j["perturbed"] = vec(r.perturbed);
    j["reward"] = std::isfinite(r.safety_reward) ? json(r.safety_reward) : json(nullptr);
    j["unsafe"] = r.unsafe;
    j["numeric_failure"] = r.numeric_failure;
    json states = json::array();
    for (const auto& s : r.states) states.push_back(vec(s));
    j["states"] = std::move(states);
    out << j.dump() << '\n';
  }
}

std::vector<AttackRecord> read_records_jsonl(std::istream& in) {
  std::vector<AttackRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      AttackRecord r;
      r.traj_id = j.at("traj").get<std::size_t>();
      r.step_index = j.at("k").get<std::size_t>();
      r.ordinal = j.at("ordinal").get<std::size_t>();
      r.source = from_std(j.at("source").get<std::vector<double>>());
      r.perturbed = from_std(j.at("perturbed").get<std::vector<double>>());
      r.safety_reward = j.at("reward").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                 : j.at("reward").get<double>();
      r.unsafe = j.at("unsafe").get<bool>();
      r.numeric_failure = j.value("numeric_failure", false);
      for (const auto& s : j.at("states")) r.states.push_back(from_std(s.get<std::vector<double>>()));
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(lineno, 1, std::string("malformed attack record: ") + e.what());
    }
  }
  return out;
}

}  // namespace aegis::attack
