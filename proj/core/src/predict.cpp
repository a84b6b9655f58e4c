#include "ivf/predict.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace ivf {

std::string_view denominator_name(Denominator d) noexcept {
  return d == Denominator::per_cycle_started ? "per_cycle_started" : "conditional_on_stage";
}

Denominator parse_denominator(std::string_view name) {
  if (name == "per_cycle_started") return Denominator::per_cycle_started;
  if (name == "conditional_on_stage" || name == "conditional") return Denominator::conditional_on_stage;
  throw ConfigError("unknown denominator '" + std::string(name) + "' (expected per_cycle_started or conditional_on_stage)");
}

double PredictedCycle::mean_evenness() const {
  if (!has_embryos()) throw Error("evenness is undefined for a draw without embryos");
  return mean_evenness_;
}

double PredictedCycle::mean_fragmentation() const {
  if (!has_embryos()) throw Error("fragmentation is undefined for a draw without embryos");
  return mean_fragmentation_;
}

PredictedCycle to_predicted(const CycleOutcome& o) {
  PredictedCycle c;
  c.n_oocytes = static_cast<std::int16_t>(std::min(o.n_oocytes, 32767));
  c.mixed = o.mixed;
  c.n_embryos = static_cast<std::int16_t>(std::min(o.n_embryos, 32767));
  c.transfer = o.transfer;
  c.det = static_cast<std::int8_t>(o.det);
  c.lbe = static_cast<std::int8_t>(o.lbe);
  for (const auto& g : o.grades) {
    ++c.evenness[static_cast<std::size_t>(g[0] - 1)];
    ++c.fragmentation[static_cast<std::size_t>(g[1] - 1)];
  }
  if (o.n_embryos >= 1 && o.mean_evenness && o.mean_fragmentation) {
    c.set_means(*o.mean_evenness, *o.mean_fragmentation);
  }
  return c;
}

namespace {

std::vector<std::size_t> spaced_draws(std::size_t total, std::size_t n) {
  if (total == 0) throw Error("fit has no posterior draws");
  if (n == 0) throw ConfigError("number of predictive draws must be positive");
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = (k * total) / n;
  return idx;
}

int stage_rank(Submodel s) {
  switch (s) {
    case Submodel::O: return 0;
    case Submodel::M: return 1;
    case Submodel::E:
    case Submodel::F: return 2;
    case Submodel::D: return 3;
    case Submodel::L: return 4;
  }
  return 0;
}

// Observed part of a patient's cascade, or the failure it already realized.
struct Observed {
  CycleState state;
  std::optional<bool> icsi;
  std::optional<PredictedCycle> terminal;  // cascade already ended upstream of the stage
};

Observed observe(const Dataset& data, std::size_t c, const StandardizationParams& standardization, int rank) {
  const auto& rec = data.cycles()[c];
  Observed ob;
  ob.state.age = standardization.apply("age", rec.age);
  ob.state.partner_age = standardization.apply("partner_age", rec.partner_age);
  ob.state.attempt = rec.attempt;
  const auto embryos = data.embryos_of(c);
  if (!embryos.empty()) ob.icsi = embryos.front().icsi;
  if (rank == 0) return ob;

  const auto fail = [&](const std::string& what) {
    return DataError("cycle " + rec.cycle_id + ": " + what + " required to predict from this stage");
  };
  if (!rec.n_oocytes) throw fail("observed oocyte count");
  ob.state.n_oocytes = rec.n_oocytes;
  PredictedCycle done;
  done.n_oocytes = static_cast<std::int16_t>(*rec.n_oocytes);
  if (*rec.n_oocytes == 0) {
    ob.terminal = done;
    return ob;
  }
  if (rank == 1) return ob;

  if (!rec.oocytes_mixed) {
    ob.terminal = done;
    return ob;
  }
  if (!rec.n_embryos) throw fail("observed embryo count");
  done.mixed = true;
  done.n_embryos = static_cast<std::int16_t>(*rec.n_embryos);
  ob.state.n_embryos = rec.n_embryos;
  if (*rec.n_embryos == 0) {
    ob.terminal = done;
    return ob;
  }
  if (rank == 2) return ob;

  const auto st = cycle_state(data, c);
  ob.state.mean_evenness = st.mean_evenness;
  ob.state.mean_fragmentation = st.mean_fragmentation;
  done.set_means(*st.mean_evenness, *st.mean_fragmentation);
  if (!rec.transfer_done) {
    ob.terminal = done;
    return ob;
  }
  if (rank == 3) return ob;

  if (!rec.det) throw fail("observed DET");
  ob.state.det = rec.det;
  return ob;
}

PredictiveDraws run_prediction(const PredictionRequest& req, int rank) {
  if (!req.fit) throw ConfigError("prediction request has no fit");
  if (!req.patients) throw ConfigError("prediction request has no patients");
  const auto& fit = *req.fit;

  PredictiveDraws out;
  out.denominator = req.denominator;
  const auto n_patients = req.patients->num_cycles();
  for (const auto& c : req.patients->cycles()) out.patient_ids.push_back(c.cycle_id);
  out.posterior_draws = spaced_draws(fit.draws.total_draws(), req.n_draws);
  out.cells.resize(out.n_draws() * n_patients);

  std::vector<Observed> observed;
  observed.reserve(n_patients);
  for (std::size_t j = 0; j < n_patients; ++j) {
    observed.push_back(observe(*req.patients, j, fit.standardization, rank));
  }

  CascadeOptions options;
  options.include_random_effects = req.include_random_effects;
  options.abandonment_prob = 0.0;
  options.icsi_prob = fit.icsi_rate;

  for (std::size_t d = 0; d < out.n_draws(); ++d) {
    const ParameterSet params = fit.parameters(out.posterior_draws[d]);
    const CascadeModel model(params, fit.spec, fit.derived);
    for (std::size_t j = 0; j < n_patients; ++j) {
      auto& cell = out.cells[d * n_patients + j];
      const auto& ob = observed[j];
      if (ob.terminal) {
        cell = *ob.terminal;
        continue;
      }
      Rng rng(derive_seed(req.seed, "patient", j), "draw", d);
      cell = to_predicted(simulate_cascade(model, ob.state, ob.icsi, options, rng));
    }
  }
  return out;
}

}  // namespace

PredictiveDraws predict_pretreatment(const PredictionRequest& request) {
  if (!request.fit) throw ConfigError("prediction request has no fit");
  if (request.setting != Setting::pretreatment || request.fit->setting != Setting::pretreatment ||
      request.fit->spec.uses_outcomes()) {
    throw ConfigError("pre-treatment prediction requires a pre-treatment fit");
  }
  return run_prediction(request, 0);
}

PredictiveDraws predict_dynamic(const PredictionRequest& request) {
  if (!request.fit) throw ConfigError("prediction request has no fit");
  if (request.setting != Setting::dynamic || request.fit->setting != Setting::dynamic) {
    throw ConfigError("dynamic prediction requires a dynamic fit");
  }
  return run_prediction(request, stage_rank(request.stage));
}

bool safe_and_successful(const PredictedCycle& c) { return c.n_oocytes < 15 && c.lbe == 1; }

stats::Interval joint_event_probability(const PredictiveDraws& draws, const DrawPredicate& predicate) {
  if (draws.denominator != Denominator::per_cycle_started) {
    throw ConfigError("joint event probabilities require per_cycle_started draws");
  }
  if (draws.n_draws() == 0 || draws.n_patients() == 0) throw Error("no predictive draws");
  std::vector<double> proportions(draws.n_draws());
  for (std::size_t d = 0; d < draws.n_draws(); ++d) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < draws.n_patients(); ++j) hits += predicate(draws.at(d, j)) ? 1 : 0;
    proportions[d] = static_cast<double>(hits) / static_cast<double>(draws.n_patients());
  }
  return stats::central_interval(std::move(proportions));
}

PointPredictions point_predictions(const PredictiveDraws& draws) {
  const auto n = draws.n_patients();
  const auto nd = static_cast<double>(draws.n_draws());
  PointPredictions p;
  p.n_oocytes.assign(n, 0.0);
  p.n_embryos.assign(n, 0.0);
  p.p_transfer.assign(n, 0.0);
  p.p_det.assign(n, 0.0);
  p.p_lbe.assign(n, 0.0);
  p.p_det_given_transfer.assign(n, std::numeric_limits<double>::quiet_NaN());
  p.p_lbe_given_transfer.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < n; ++j) {
    double oo = 0, em = 0, tr = 0, det = 0, lbe = 0;
    for (std::size_t d = 0; d < draws.n_draws(); ++d) {
      const auto& c = draws.at(d, j);
      oo += c.n_oocytes;
      em += c.n_embryos;
      tr += c.transfer ? 1 : 0;
      det += c.det;
      lbe += c.lbe;
    }
    p.n_oocytes[j] = oo / nd;
    p.n_embryos[j] = em / nd;
    p.p_transfer[j] = tr / nd;
    p.p_det[j] = det / nd;
    p.p_lbe[j] = lbe / nd;
    if (tr > 0) {
      p.p_det_given_transfer[j] = det / tr;
      p.p_lbe_given_transfer[j] = lbe / tr;
    }
  }
  return p;
}

void write_predictive_draws(const PredictiveDraws& draws, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "patient,draw,outcome,value\n";
  const bool conditional = draws.denominator == Denominator::conditional_on_stage;
  for (std::size_t j = 0; j < draws.n_patients(); ++j) {
    const auto& id = draws.patient_ids[j];
    for (std::size_t d = 0; d < draws.n_draws(); ++d) {
      const auto& c = draws.at(d, j);
      const auto row = [&](const char* outcome, const std::string& value) {
        out << id << ',' << d + 1 << ',' << outcome << ',' << value << '\n';
      };
      row("n_oocytes", std::to_string(c.n_oocytes));
      if (!conditional || c.mixed) row("n_embryos", std::to_string(c.n_embryos));
      if (c.has_embryos()) {
        row("mean_evenness", csv::format_shortest(c.mean_evenness()));
        row("mean_fragmentation", csv::format_shortest(c.mean_fragmentation()));
      }
      if (!conditional || c.has_embryos()) row("transfer", c.transfer ? "1" : "0");
      if (!conditional || c.transfer) {
        row("det", std::to_string(c.det));
        row("lbe", std::to_string(c.lbe));
      }
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kCountBuckets = 26;  // 0..24, 25+

std::size_t bucket(int count) { return static_cast<std::size_t>(std::clamp(count, 0, 25)); }

std::string bucket_label(std::size_t b) { return b == 25 ? "25+" : std::to_string(b); }

}  // namespace

std::vector<CalibrationRow> calibration_table(const PredictiveDraws& draws, const Dataset& observed) {
  const auto n = draws.n_patients();
  if (observed.num_cycles() != n) throw DataError("predictive draws and observed dataset have different patients");
  for (std::size_t j = 0; j < n; ++j) {
    if (observed.cycles()[j].cycle_id != draws.patient_ids[j]) {
      throw DataError("predictive draws and observed dataset are not aligned at " + draws.patient_ids[j]);
    }
  }
  const auto nd = draws.n_draws();
  std::vector<CalibrationRow> rows;
  const auto add = [&](const std::string& outcome, const std::string& category, double obs,
                       std::vector<double> predicted) {
    std::sort(predicted.begin(), predicted.end());
    rows.push_back({outcome, category, obs, stats::quantile_sorted(predicted, 0.025),
                    stats::quantile_sorted(predicted, 0.5), stats::quantile_sorted(predicted, 0.975)});
  };

  // Counts per bucket.
  for (const char* outcome : {"n_oocytes", "n_embryos"}) {
    const bool oocytes = std::string(outcome) == "n_oocytes";
    std::array<double, kCountBuckets> obs{};
    for (const auto& c : observed.cycles()) {
      const int v = oocytes ? c.n_oocytes.value_or(0) : c.n_embryos.value_or(0);
      obs[bucket(v)] += 1.0;
    }
    std::vector<std::array<double, kCountBuckets>> pred(nd);
    for (std::size_t d = 0; d < nd; ++d) {
      pred[d].fill(0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto& c = draws.at(d, j);
        pred[d][bucket(oocytes ? c.n_oocytes : c.n_embryos)] += 1.0;
      }
    }
    for (std::size_t b = 0; b < kCountBuckets; ++b) {
      std::vector<double> col(nd);
      for (std::size_t d = 0; d < nd; ++d) col[d] = pred[d][b];
      add(outcome, bucket_label(b), obs[b], std::move(col));
    }
  }

  // Binary events per cycle started.
  const auto binary = [&](const char* outcome, auto observed_event, auto predicted_event) {
    double obs = 0.0;
    for (const auto& c : observed.cycles()) obs += observed_event(c) ? 1.0 : 0.0;
    std::vector<double> col(nd, 0.0);
    for (std::size_t d = 0; d < nd; ++d) {
      for (std::size_t j = 0; j < n; ++j) col[d] += predicted_event(draws.at(d, j)) ? 1.0 : 0.0;
      col[d] /= static_cast<double>(n);
    }
    add(outcome, "event", obs / static_cast<double>(n), std::move(col));
  };
  binary("transfer", [](const CycleRecord& c) { return c.transfer_done; },
         [](const PredictedCycle& c) { return c.transfer; });
  binary("det", [](const CycleRecord& c) { return c.det.value_or(0) == 1; },
         [](const PredictedCycle& c) { return c.det == 1; });
  binary("lbe", [](const CycleRecord& c) { return c.lbe.value_or(0) == 1; },
         [](const PredictedCycle& c) { return c.lbe == 1; });

  // Grade frequencies among embryos; draws with observed grades contribute no counts.
  for (const char* outcome : {"evenness", "fragmentation"}) {
    const bool even = std::string(outcome) == "evenness";
    std::array<double, 4> obs{};
    double total = 0.0;
    for (const auto& e : observed.embryos()) {
      obs[static_cast<std::size_t>((even ? e.evenness : e.fragmentation) - 1)] += 1.0;
      total += 1.0;
    }
    std::vector<std::array<double, 4>> pred;
    for (std::size_t d = 0; d < nd; ++d) {
      std::array<double, 4> counts{};
      double t = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const auto& c = draws.at(d, j);
        if (!c.has_embryos()) continue;
        const auto& g = even ? c.evenness : c.fragmentation;
        for (std::size_t k = 0; k < 4; ++k) {
          counts[k] += g[k];
          t += g[k];
        }
      }
      if (t > 0.0) {
        for (double& v : counts) v /= t;
        pred.push_back(counts);
      }
    }
    if (pred.empty() || total == 0.0) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> col;
      for (const auto& p : pred) col.push_back(p[k]);
      add(outcome, std::to_string(k + 1), obs[k] / total, std::move(col));
    }
  }
  return rows;
}

void calibration_export(const PredictiveDraws& draws, const Dataset& observed, const std::filesystem::path& path) {
  const auto rows = calibration_table(draws, observed);
  auto out = csv::open_output(path);
  out << "outcome,category,observed,p2.5,p50,p97.5\n";
  for (const auto& r : rows) {
    out << r.outcome << ',' << r.category << ',' << csv::format_shortest(r.observed) << ','
        << csv::format_shortest(r.p025) << ',' << csv::format_shortest(r.p50) << ','
        << csv::format_shortest(r.p975) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace ivf
