#include "ivf/data_model.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace ivf {

std::string_view submodel_code(Submodel s) noexcept {
  static constexpr std::array<std::string_view, kNumSubmodels> codes{"O", "M", "E", "F", "D", "L"};
  return codes[index(s)];
}

std::string_view submodel_title(Submodel s) noexcept {
  static constexpr std::array<std::string_view, kNumSubmodels> titles{
      "Number of oocytes", "Fertilisation rate", "Embryo evenness",
      "Embryo fragmentation", "Double embryo transfer", "Live birth event"};
  return titles[index(s)];
}

Submodel parse_submodel(std::string_view code) {
  for (auto s : kAllSubmodels) {
    if (submodel_code(s) == code) return s;
  }
  throw ConfigError("unknown submodel '" + std::string(code) + "'");
}

std::string_view setting_name(Setting s) noexcept {
  return s == Setting::pretreatment ? "pretreatment" : "dynamic";
}

Setting parse_setting(std::string_view name) {
  if (name == "pretreatment") return Setting::pretreatment;
  if (name == "dynamic") return Setting::dynamic;
  throw ConfigError("unknown setting '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> StandardizationParams::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

double StandardizationParams::sd_of(std::string_view name) const {
  const auto i = find(name);
  return i ? sd[*i] : 1.0;
}

double StandardizationParams::apply(std::string_view name, double raw) const {
  const auto i = find(name);
  return i ? (raw - mean[*i]) / sd[*i] : raw;
}

double StandardizationParams::invert(std::string_view name, double standardized) const {
  const auto i = find(name);
  return i ? standardized * sd[*i] + mean[*i] : standardized;
}

void StandardizationParams::set(std::string name, double m, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw DataError("standard deviation of " + name + " must be positive");
  }
  if (const auto i = find(name)) {
    mean[*i] = m;
    sd[*i] = s;
    return;
  }
  names.push_back(std::move(name));
  mean.push_back(m);
  sd.push_back(s);
}

// ---------------------------------------------------------------------------

namespace {

std::size_t row_of(const std::vector<std::size_t>& rows, std::size_t i) {
  return i < rows.size() ? rows[i] : i + 1;
}

void validate_cycle(const CycleRecord& c, std::size_t row) {
  auto fail = [&](const std::string& msg) { throw DataError("cycle " + c.cycle_id + ": " + msg, row); };
  if (c.cycle_id.empty()) fail("empty cycle_id");
  if (!std::isfinite(c.age) || !std::isfinite(c.partner_age)) fail("non-finite age");
  if (c.attempt < 1 || c.attempt > 4) fail("attempt must be 1..4 (4 = 4th or 5th)");
  if (c.n_oocytes && *c.n_oocytes < 0) fail("negative n_oocytes");
  if (c.n_embryos && *c.n_embryos < 0) fail("negative n_embryos");
  if (c.n_oocytes && *c.n_oocytes == 0 && c.oocytes_mixed) fail("oocytes_mixed with zero oocytes");
  if (!c.oocytes_mixed) {
    if (c.n_embryos || c.det || c.lbe) fail("n_embryos/det/lbe present but oocytes not mixed");
    if (c.transfer_done) fail("transfer without mixed oocytes");
  } else {
    if (!c.n_oocytes) fail("oocytes_mixed requires n_oocytes");
    if (!c.n_embryos) fail("oocytes_mixed requires n_embryos");
  }
  if (!c.transfer_done) {
    if (c.det || c.lbe) fail("det/lbe present without transfer");
  } else {
    if (!c.n_embryos || *c.n_embryos < 1) fail("transfer requires at least one embryo");
    if (!c.det || !c.lbe) fail("transfer requires det and lbe");
  }
  for (const auto& v : {c.det, c.lbe}) {
    if (v && *v != 0 && *v != 1) fail("det/lbe must be 0 or 1");
  }
}

}  // namespace

Dataset::Dataset(std::vector<CycleRecord> cycles, std::vector<EmbryoRecord> embryos,
                 std::vector<std::size_t> cycle_rows, std::vector<std::size_t> embryo_rows)
    : cycles_(std::move(cycles)) {
  std::unordered_map<std::string, std::size_t> by_id;
  by_id.reserve(cycles_.size());
  for (std::size_t i = 0; i < cycles_.size(); ++i) {
    validate_cycle(cycles_[i], row_of(cycle_rows, i));
    if (!by_id.emplace(cycles_[i].cycle_id, i).second) {
      throw DataError("duplicate cycle_id " + cycles_[i].cycle_id, row_of(cycle_rows, i));
    }
  }

  std::vector<std::size_t> owner(embryos.size());
  std::vector<std::size_t> counts(cycles_.size(), 0);
  for (std::size_t e = 0; e < embryos.size(); ++e) {
    const auto& rec = embryos[e];
    const auto row = row_of(embryo_rows, e);
    const auto it = by_id.find(rec.cycle_id);
    if (it == by_id.end()) throw DataError("embryo references unknown cycle_id " + rec.cycle_id, row);
    if (rec.evenness < 1 || rec.evenness > 4 || rec.fragmentation < 1 || rec.fragmentation > 4) {
      throw DataError("embryo grades must be in 1..4 (cycle " + rec.cycle_id + ")", row);
    }
    const auto& cyc = cycles_[it->second];
    if (!cyc.n_embryos || *cyc.n_embryos < 1) {
      throw DataError("embryo for cycle " + rec.cycle_id + " which has no embryos", row);
    }
    owner[e] = it->second;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < cycles_.size(); ++i) {
    const int expected = cycles_[i].n_embryos.value_or(0);
    if (counts[i] != static_cast<std::size_t>(expected)) {
      throw DataError("cycle " + cycles_[i].cycle_id + " has n_embryos=" + std::to_string(expected) + " but " +
                          std::to_string(counts[i]) + " embryo rows",
                      row_of(cycle_rows, i));
    }
  }

  std::vector<std::size_t> order(embryos.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return owner[a] < owner[b]; });
  embryos_.reserve(embryos.size());
  for (auto e : order) embryos_.push_back(std::move(embryos[e]));

  embryo_ranges_.resize(cycles_.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < cycles_.size(); ++i) {
    embryo_ranges_[i] = {pos, pos + counts[i]};
    pos += counts[i];
  }
}

std::span<const EmbryoRecord> Dataset::embryos_of(std::size_t c) const {
  const auto [b, e] = embryo_ranges_.at(c);
  return std::span<const EmbryoRecord>(embryos_).subspan(b, e - b);
}

std::optional<std::size_t> Dataset::find_cycle(std::string_view id) const {
  for (std::size_t i = 0; i < cycles_.size(); ++i) {
    if (cycles_[i].cycle_id == id) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> Dataset::units(Submodel s) const {
  std::vector<std::size_t> out;
  switch (s) {
    case Submodel::O:
      for (std::size_t i = 0; i < cycles_.size(); ++i) {
        if (cycles_[i].n_oocytes) out.push_back(i);
      }
      break;
    case Submodel::M:
      for (std::size_t i = 0; i < cycles_.size(); ++i) {
        if (cycles_[i].oocytes_mixed) out.push_back(i);
      }
      break;
    case Submodel::E:
    case Submodel::F:
      out.resize(embryos_.size());
      std::iota(out.begin(), out.end(), 0);
      break;
    case Submodel::D:
    case Submodel::L:
      for (std::size_t i = 0; i < cycles_.size(); ++i) {
        if (cycles_[i].transfer_done) out.push_back(i);
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& cycles_file, const std::filesystem::path& embryos_file) {
  if (!std::filesystem::exists(cycles_file)) throw Error("missing cycles file " + cycles_file.string());
  if (!std::filesystem::exists(embryos_file)) throw Error("missing embryos file " + embryos_file.string());

  std::vector<CycleRecord> cycles;
  std::vector<std::size_t> cycle_rows;
  {
    csv::Reader reader(cycles_file);
    reader.require_header(kCyclesHeader);
    std::vector<std::string> f;
    while (reader.next(f)) {
      const auto row = reader.row();
      CycleRecord c;
      c.cycle_id = f[0];
      c.age = csv::parse_double(f[1], row, "age");
      c.partner_age = csv::parse_double(f[2], row, "partner_age");
      const long attempt = csv::parse_int(f[3], row, "attempt");
      if (attempt < 1 || attempt > 5) throw DataError("attempt must be 1..5", row);
      c.attempt = static_cast<int>(std::min(attempt, 4L));
      auto opt = [&](const std::string& s, const char* col) -> std::optional<int> {
        const auto v = csv::parse_optional_int(s, row, col);
        return v ? std::optional<int>(static_cast<int>(*v)) : std::nullopt;
      };
      c.n_oocytes = opt(f[4], "n_oocytes");
      c.oocytes_mixed = csv::parse_bool(f[5], row, "oocytes_mixed");
      c.n_embryos = opt(f[6], "n_embryos");
      c.transfer_done = csv::parse_bool(f[7], row, "transfer_done");
      c.det = opt(f[8], "det");
      c.lbe = opt(f[9], "lbe");
      cycles.push_back(std::move(c));
      cycle_rows.push_back(row);
    }
  }

  std::vector<EmbryoRecord> embryos;
  std::vector<std::size_t> embryo_rows;
  {
    csv::Reader reader(embryos_file);
    reader.require_header(kEmbryosHeader);
    std::vector<std::string> f;
    while (reader.next(f)) {
      const auto row = reader.row();
      EmbryoRecord e;
      e.cycle_id = f[0];
      e.evenness = static_cast<int>(csv::parse_int(f[1], row, "evenness"));
      e.fragmentation = static_cast<int>(csv::parse_int(f[2], row, "fragmentation"));
      e.icsi = csv::parse_bool(f[3], row, "icsi");
      embryos.push_back(std::move(e));
      embryo_rows.push_back(row);
    }
  }
  return Dataset(std::move(cycles), std::move(embryos), std::move(cycle_rows), std::move(embryo_rows));
}

void write_dataset(const Dataset& data, const std::filesystem::path& cycles_file,
                   const std::filesystem::path& embryos_file) {
  const Dataset raw = data.standardization() ? unstandardize(data) : data;
  {
    auto out = csv::open_output(cycles_file);
    for (std::size_t i = 0; i < kCyclesHeader.size(); ++i) out << (i ? "," : "") << kCyclesHeader[i];
    out << '\n';
    auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
    for (const auto& c : raw.cycles()) {
      out << c.cycle_id << ',' << csv::format_shortest(c.age) << ',' << csv::format_shortest(c.partner_age) << ','
          << c.attempt << ',' << opt(c.n_oocytes) << ',' << (c.oocytes_mixed ? 1 : 0) << ',' << opt(c.n_embryos)
          << ',' << (c.transfer_done ? 1 : 0) << ',' << opt(c.det) << ',' << opt(c.lbe) << '\n';
    }
    if (!out) throw Error("write failed: " + cycles_file.string());
  }
  {
    auto out = csv::open_output(embryos_file);
    for (std::size_t i = 0; i < kEmbryosHeader.size(); ++i) out << (i ? "," : "") << kEmbryosHeader[i];
    out << '\n';
    for (const auto& e : raw.embryos()) {
      out << e.cycle_id << ',' << e.evenness << ',' << e.fragmentation << ',' << (e.icsi ? 1 : 0) << '\n';
    }
    if (!out) throw Error("write failed: " + embryos_file.string());
  }
}

// ---------------------------------------------------------------------------

namespace {

double& cycle_field(CycleRecord& c, std::string_view name) {
  if (name == "age") return c.age;
  if (name == "partner_age") return c.partner_age;
  throw ConfigError("cannot standardize unknown covariate '" + std::string(name) + "'");
}

}  // namespace

std::pair<Dataset, StandardizationParams> standardize(const Dataset& data, const std::vector<std::string>& covariates) {
  Dataset out = data;
  StandardizationParams params = data.standardization().value_or(StandardizationParams{});
  const auto n = out.cycles_.size();
  for (const auto& name : covariates) {
    if (data.standardization() && data.standardization()->find(name)) {
      throw DataError("covariate " + name + " is already standardized");
    }
    if (n < 2) throw DataError("need at least two cycles to standardize " + name);
    double mean = 0.0;
    for (auto& c : out.cycles_) mean += cycle_field(c, name);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (auto& c : out.cycles_) {
      const double d = cycle_field(c, name) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DataError("covariate " + name + " has zero variance");
    for (auto& c : out.cycles_) {
      double& v = cycle_field(c, name);
      v = (v - mean) / sd;
    }
    params.set(name, mean, sd);
  }
  out.standardization_ = params;
  return {std::move(out), std::move(params)};
}

Dataset unstandardize(const Dataset& data) {
  Dataset out = data;
  if (!data.standardization_) return out;
  const auto& p = *data.standardization_;
  for (auto& c : out.cycles_) {
    for (const auto& name : p.names) {
      double& v = cycle_field(c, name);
      v = p.invert(name, v);
    }
  }
  out.standardization_.reset();
  return out;
}

// ---------------------------------------------------------------------------

std::string_view covariate_name(Covariate c) noexcept {
  switch (c) {
    case Covariate::age: return "age";
    case Covariate::partner_age: return "partner_age";
    case Covariate::attempt2: return "attempt2";
    case Covariate::attempt3: return "attempt3";
    case Covariate::attempt4plus: return "attempt4plus";
    case Covariate::icsi: return "icsi";
    case Covariate::n_oocytes: return "n_oocytes";
    case Covariate::fert_rate: return "fert_rate";
    case Covariate::mean_evenness: return "mean_evenness";
    case Covariate::mean_fragmentation: return "mean_fragmentation";
    case Covariate::det: return "det";
  }
  return "?";
}

std::string_view covariate_label(Covariate c) noexcept {
  switch (c) {
    case Covariate::age: return "Age (years)";
    case Covariate::partner_age: return "Partner Age (years)";
    case Covariate::attempt2: return "Attempt number: 2nd";
    case Covariate::attempt3: return "Attempt number: 3rd";
    case Covariate::attempt4plus: return "Attempt number: 4th or 5th";
    case Covariate::icsi: return "Sperm injected into egg";
    case Covariate::n_oocytes: return "Number of oocytes";
    case Covariate::fert_rate: return "Fertilisation rate";
    case Covariate::mean_evenness: return "Embryo evenness";
    case Covariate::mean_fragmentation: return "Embryo fragmentation";
    case Covariate::det: return "DET";
  }
  return "?";
}

std::vector<Covariate> parse_covariates(std::string_view name) {
  if (name == "attempt") return {Covariate::attempt2, Covariate::attempt3, Covariate::attempt4plus};
  for (auto c : {Covariate::age, Covariate::partner_age, Covariate::attempt2, Covariate::attempt3,
                 Covariate::attempt4plus, Covariate::icsi, Covariate::n_oocytes, Covariate::fert_rate,
                 Covariate::mean_evenness, Covariate::mean_fragmentation, Covariate::det}) {
    if (covariate_name(c) == name) return {c};
  }
  throw ConfigError("unknown covariate '" + std::string(name) + "'");
}

bool is_outcome_covariate(Covariate c) noexcept {
  switch (c) {
    case Covariate::n_oocytes:
    case Covariate::fert_rate:
    case Covariate::mean_evenness:
    case Covariate::mean_fragmentation:
    case Covariate::det:
      return true;
    default:
      return false;
  }
}

CovariateSpec CovariateSpec::defaults(Setting setting) {
  using C = Covariate;
  CovariateSpec spec;
  auto& cols = spec.columns;
  const std::vector<C> ages{C::age, C::partner_age};
  const std::vector<C> attempts{C::attempt2, C::attempt3, C::attempt4plus};
  cols[index(Submodel::O)] = ages;
  cols[index(Submodel::O)].insert(cols[index(Submodel::O)].end(), attempts.begin(), attempts.end());
  cols[index(Submodel::M)] = ages;
  cols[index(Submodel::E)] = {C::age, C::partner_age, C::icsi};
  cols[index(Submodel::F)] = {C::age, C::partner_age, C::icsi};
  cols[index(Submodel::D)] = cols[index(Submodel::O)];
  cols[index(Submodel::L)] = ages;
  if (setting == Setting::dynamic) {
    for (auto s : {Submodel::E, Submodel::F}) {
      cols[index(s)].push_back(C::n_oocytes);
      cols[index(s)].push_back(C::fert_rate);
    }
    for (auto s : {Submodel::D, Submodel::L}) {
      for (auto c : {C::n_oocytes, C::fert_rate, C::mean_evenness, C::mean_fragmentation}) {
        cols[index(s)].push_back(c);
      }
    }
    cols[index(Submodel::L)].push_back(C::det);
  }
  return spec;
}

bool CovariateSpec::uses_outcomes() const noexcept {
  for (const auto& list : columns) {
    for (auto c : list) {
      if (is_outcome_covariate(c)) return true;
    }
  }
  return false;
}

void CovariateSpec::validate() const {
  // Earliest submodel whose units all have the outcome observed before the stage starts.
  auto first_allowed = [](Covariate c) -> std::size_t {
    switch (c) {
      case Covariate::n_oocytes: return index(Submodel::M);
      case Covariate::fert_rate: return index(Submodel::E);
      case Covariate::mean_evenness:
      case Covariate::mean_fragmentation: return index(Submodel::D);
      case Covariate::det: return index(Submodel::L);
      default: return 0;
    }
  };
  for (auto s : kAllSubmodels) {
    const auto& list = columns[index(s)];
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto c = list[i];
      if (c == Covariate::icsi && !is_ordinal(s)) {
        throw ConfigError("icsi is an embryo-level covariate; not available to submodel " +
                          std::string(submodel_code(s)));
      }
      if (index(s) < first_allowed(c)) {
        throw ConfigError("covariate " + std::string(covariate_name(c)) + " is not observed before submodel " +
                          std::string(submodel_code(s)));
      }
      if (std::count(list.begin(), list.end(), c) > 1) {
        throw ConfigError("duplicate covariate " + std::string(covariate_name(c)));
      }
    }
  }
}

CycleState cycle_state(const Dataset& data, std::size_t cycle) {
  const auto& c = data.cycles()[cycle];
  CycleState st;
  st.age = c.age;
  st.partner_age = c.partner_age;
  st.attempt = c.attempt;
  st.n_oocytes = c.n_oocytes;
  st.n_embryos = c.n_embryos;
  st.det = c.det;
  const auto embryos = data.embryos_of(cycle);
  if (!embryos.empty()) {
    double ev = 0.0, fr = 0.0;
    for (const auto& e : embryos) {
      ev += e.evenness;
      fr += e.fragmentation;
    }
    st.mean_evenness = ev / static_cast<double>(embryos.size());
    st.mean_fragmentation = fr / static_cast<double>(embryos.size());
    st.icsi = embryos.front().icsi;
  }
  return st;
}

std::optional<double> raw_covariate(Covariate c, const CycleState& st, bool icsi) {
  switch (c) {
    case Covariate::age: return st.age;
    case Covariate::partner_age: return st.partner_age;
    case Covariate::attempt2: return st.attempt == 2 ? 1.0 : 0.0;
    case Covariate::attempt3: return st.attempt == 3 ? 1.0 : 0.0;
    case Covariate::attempt4plus: return st.attempt >= 4 ? 1.0 : 0.0;
    case Covariate::icsi: return icsi ? 1.0 : 0.0;
    case Covariate::n_oocytes:
      if (!st.n_oocytes) return std::nullopt;
      return static_cast<double>(*st.n_oocytes);
    case Covariate::fert_rate:
      if (!st.n_oocytes || *st.n_oocytes < 1 || !st.n_embryos) return std::nullopt;
      return static_cast<double>(*st.n_embryos) / static_cast<double>(*st.n_oocytes);
    case Covariate::mean_evenness: return st.mean_evenness;
    case Covariate::mean_fragmentation: return st.mean_fragmentation;
    case Covariate::det:
      if (!st.det) return std::nullopt;
      return static_cast<double>(*st.det);
  }
  return std::nullopt;
}

StandardizationParams derived_moments(const Dataset& data) {
  StandardizationParams out;
  for (auto c : {Covariate::n_oocytes, Covariate::fert_rate, Covariate::mean_evenness,
                 Covariate::mean_fragmentation}) {
    std::vector<double> values;
    for (std::size_t i = 0; i < data.num_cycles(); ++i) {
      const auto st = cycle_state(data, i);
      if (c == Covariate::fert_rate && !data.cycles()[i].oocytes_mixed) continue;
      if (const auto v = raw_covariate(c, st, false)) values.push_back(*v);
    }
    if (values.size() < 2) continue;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    if (sd > 0.0) out.set(std::string(covariate_name(c)), mean, sd);
  }
  return out;
}

std::size_t design_width(Submodel s, const CovariateSpec& spec) {
  return (has_intercept(s) ? 1 : 0) + spec.columns[index(s)].size();
}

std::vector<std::string> design_columns(Submodel s, const CovariateSpec& spec) {
  std::vector<std::string> cols;
  if (has_intercept(s)) cols.emplace_back("intercept");
  for (auto c : spec.columns[index(s)]) cols.emplace_back(covariate_name(c));
  return cols;
}

void fill_design_row(Submodel s, const CovariateSpec& spec, const StandardizationParams& derived,
                     const CycleState& state, bool icsi, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  Eigen::Index k = 0;
  if (has_intercept(s)) row(k++) = 1.0;
  for (auto c : spec.columns[index(s)]) {
    const auto v = raw_covariate(c, state, icsi);
    if (!v) {
      throw DataError("covariate " + std::string(covariate_name(c)) + " undefined for a unit of submodel " +
                      std::string(submodel_code(s)));
    }
    row(k++) = is_outcome_covariate(c) ? derived.apply(covariate_name(c), *v) : *v;
  }
}

DesignMatrices build_design(const Dataset& data, Setting setting, const std::optional<StandardizationParams>& derived) {
  auto dm = build_design(data, CovariateSpec::defaults(setting), derived);
  dm.setting = setting;
  return dm;
}

DesignMatrices build_design(const Dataset& data, const CovariateSpec& spec,
                            const std::optional<StandardizationParams>& derived) {
  if (!data.standardization()) throw DataError("build_design requires a standardized dataset");
  spec.validate();
  DesignMatrices dm;
  dm.spec = spec;
  dm.setting = spec.uses_outcomes() ? Setting::dynamic : Setting::pretreatment;
  dm.derived = derived ? *derived : derived_moments(data);

  std::vector<CycleState> states(data.num_cycles());
  for (std::size_t i = 0; i < data.num_cycles(); ++i) states[i] = cycle_state(data, i);

  for (auto s : kAllSubmodels) {
    auto& sd = dm.sub[index(s)];
    sd.columns = design_columns(s, spec);
    sd.units = data.units(s);
    sd.X.resize(static_cast<Eigen::Index>(sd.units.size()), static_cast<Eigen::Index>(sd.columns.size()));
    std::vector<std::size_t> embryo_owner;
    if (is_ordinal(s)) {
      embryo_owner.resize(data.num_embryos());
      for (std::size_t c = 0; c < data.num_cycles(); ++c) {
        const auto [b, e] = data.embryo_range(c);
        for (auto k = b; k < e; ++k) embryo_owner[k] = c;
      }
    }
    for (std::size_t r = 0; r < sd.units.size(); ++r) {
      const auto unit = sd.units[r];
      const auto cycle = is_ordinal(s) ? embryo_owner[unit] : unit;
      const bool icsi = is_ordinal(s) ? data.embryos()[unit].icsi : false;
      try {
        fill_design_row(s, spec, dm.derived, states[cycle], icsi, sd.X.row(static_cast<Eigen::Index>(r)));
      } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " (cycle " + data.cycles()[cycle].cycle_id + ")");
      }
    }
  }
  return dm;
}

}  // namespace ivf
