#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ivf {

// The six linked outcomes, in treatment order. The underlying value is the
// position of the component in the latent vector.
enum class Submodel : std::size_t { O = 0, M = 1, E = 2, F = 3, D = 4, L = 5 };

inline constexpr std::size_t kNumSubmodels = 6;
inline constexpr std::array<Submodel, kNumSubmodels> kAllSubmodels{
    Submodel::O, Submodel::M, Submodel::E, Submodel::F, Submodel::D, Submodel::L};

constexpr std::size_t index(Submodel s) noexcept { return static_cast<std::size_t>(s); }
std::string_view submodel_code(Submodel s) noexcept;   // "O", "M", ...
std::string_view submodel_title(Submodel s) noexcept;  // "Number of oocytes", ...
Submodel parse_submodel(std::string_view code);

// Submodels with a free patient-level scale theta (Poisson and cumulative logit).
constexpr bool has_scale(Submodel s) noexcept { return index(s) < 4; }
constexpr bool is_ordinal(Submodel s) noexcept { return s == Submodel::E || s == Submodel::F; }
constexpr bool is_probit(Submodel s) noexcept { return s == Submodel::D || s == Submodel::L; }
constexpr bool has_intercept(Submodel s) noexcept { return !is_ordinal(s); }

enum class Setting { pretreatment, dynamic };
std::string_view setting_name(Setting s) noexcept;
Setting parse_setting(std::string_view name);

struct CycleRecord {
  std::string cycle_id;
  double age = 0.0;
  double partner_age = 0.0;
  int attempt = 1;  // 1, 2, 3, or 4 for "4th or 5th"
  std::optional<int> n_oocytes;
  bool oocytes_mixed = false;
  std::optional<int> n_embryos;
  bool transfer_done = false;
  std::optional<int> det;
  std::optional<int> lbe;
};

struct EmbryoRecord {
  std::string cycle_id;
  int evenness = 1;       // 1..4
  int fragmentation = 1;  // 1..4
  bool icsi = false;
};

// Per-covariate centring and scaling. sd is strictly positive.
struct StandardizationParams {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> sd;

  std::optional<std::size_t> find(std::string_view name) const;
  double sd_of(std::string_view name) const;  // 1.0 when not standardized
  double apply(std::string_view name, double raw) const;
  double invert(std::string_view name, double standardized) const;
  void set(std::string name, double mean, double sd);
};

// Validated two-level cohort. Embryos are stored grouped by cycle, in cycle order.
class Dataset {
 public:
  Dataset() = default;
  // Validates every record invariant. `cycle_rows` / `embryo_rows` give the
  // source row numbers reported in errors (defaults: position + 1).
  Dataset(std::vector<CycleRecord> cycles, std::vector<EmbryoRecord> embryos,
          std::vector<std::size_t> cycle_rows = {}, std::vector<std::size_t> embryo_rows = {});

  std::span<const CycleRecord> cycles() const noexcept { return cycles_; }
  std::span<const EmbryoRecord> embryos() const noexcept { return embryos_; }
  std::size_t num_cycles() const noexcept { return cycles_.size(); }
  std::size_t num_embryos() const noexcept { return embryos_.size(); }

  // Half-open embryo index range of cycle `c`.
  std::pair<std::size_t, std::size_t> embryo_range(std::size_t c) const { return embryo_ranges_.at(c); }
  std::span<const EmbryoRecord> embryos_of(std::size_t c) const;
  std::optional<std::size_t> find_cycle(std::string_view id) const;

  const std::optional<StandardizationParams>& standardization() const noexcept { return standardization_; }

  // Units included in each submodel (cycle indices; for E and F embryo indices).
  std::vector<std::size_t> units(Submodel s) const;

 private:
  friend std::pair<Dataset, StandardizationParams> standardize(const Dataset&, const std::vector<std::string>&);
  friend Dataset unstandardize(const Dataset&);

  std::vector<CycleRecord> cycles_;
  std::vector<EmbryoRecord> embryos_;
  std::vector<std::pair<std::size_t, std::size_t>> embryo_ranges_;
  std::optional<StandardizationParams> standardization_;
};

inline const std::vector<std::string> kCyclesHeader{"cycle_id", "age", "partner_age", "attempt",
                                                    "n_oocytes", "oocytes_mixed", "n_embryos",
                                                    "transfer_done", "det", "lbe"};
inline const std::vector<std::string> kEmbryosHeader{"cycle_id", "evenness", "fragmentation", "icsi"};

Dataset load_dataset(const std::filesystem::path& cycles_file, const std::filesystem::path& embryos_file);
void write_dataset(const Dataset& data, const std::filesystem::path& cycles_file,
                   const std::filesystem::path& embryos_file);

// Centres and scales the named cycle-level covariates ("age", "partner_age")
// with the sample mean and n-1 standard deviation.
std::pair<Dataset, StandardizationParams> standardize(const Dataset& data, const std::vector<std::string>& covariates);
Dataset unstandardize(const Dataset& data);

// ---------------------------------------------------------------------------
// Covariates and design matrices

enum class Covariate {
  age,
  partner_age,
  attempt2,
  attempt3,
  attempt4plus,
  icsi,
  n_oocytes,
  fert_rate,
  mean_evenness,
  mean_fragmentation,
  det,
};

std::string_view covariate_name(Covariate c) noexcept;
std::string_view covariate_label(Covariate c) noexcept;
// "attempt" expands to the three dummies; other names map one to one.
std::vector<Covariate> parse_covariates(std::string_view name);
// True for covariates derived from observed stage outcomes.
bool is_outcome_covariate(Covariate c) noexcept;

// Covariates per submodel, intercept excluded (it is implied for O, M, D, L).
struct CovariateSpec {
  std::array<std::vector<Covariate>, kNumSubmodels> columns;

  static CovariateSpec defaults(Setting setting);
  bool uses_outcomes() const noexcept;
  // Throws ConfigError when a covariate is not available to a submodel
  // (e.g. the DET indicator in the D submodel itself).
  void validate() const;
};

// What is known about a cycle when its covariate rows are formed. Ages are on
// the standardized scale. Outcome fields are filled from data or simulation.
struct CycleState {
  double age = 0.0;
  double partner_age = 0.0;
  int attempt = 1;
  bool icsi = false;
  std::optional<int> n_oocytes;
  std::optional<int> n_embryos;
  std::optional<double> mean_evenness;
  std::optional<double> mean_fragmentation;
  std::optional<int> det;
};

CycleState cycle_state(const Dataset& data, std::size_t cycle);

// Raw (unstandardized) covariate value; nullopt when undefined for the state.
std::optional<double> raw_covariate(Covariate c, const CycleState& state, bool icsi);

struct SubmodelDesign {
  std::vector<std::string> columns;  // "intercept" first when present
  Eigen::MatrixXd X;                 // one row per included unit
  std::vector<std::size_t> units;    // cycle (or embryo) indices of the rows
};

struct DesignMatrices {
  CovariateSpec spec;
  Setting setting = Setting::pretreatment;
  // Training moments of the outcome covariates.
  StandardizationParams derived;
  std::array<SubmodelDesign, kNumSubmodels> sub;

  const SubmodelDesign& operator[](Submodel s) const { return sub[index(s)]; }
};

// Training moments for outcome covariates, each over the cycles where the
// quantity is defined. `det` stays a 0/1 indicator.
StandardizationParams derived_moments(const Dataset& data);

// Fills one design row for `s`, intercept first when the submodel has one.
// Throws DataError when a required outcome is undefined for the state.
void fill_design_row(Submodel s, const CovariateSpec& spec, const StandardizationParams& derived,
                     const CycleState& state, bool icsi, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row);
std::size_t design_width(Submodel s, const CovariateSpec& spec);
std::vector<std::string> design_columns(Submodel s, const CovariateSpec& spec);

// Requires a standardized dataset. When `derived` is omitted the outcome
// covariate moments are computed from `data`.
DesignMatrices build_design(const Dataset& data, Setting setting,
                            const std::optional<StandardizationParams>& derived = std::nullopt);
DesignMatrices build_design(const Dataset& data, const CovariateSpec& spec,
                            const std::optional<StandardizationParams>& derived = std::nullopt);

}  // namespace ivf
