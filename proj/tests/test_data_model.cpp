#include "ivf/data_model.hpp"
#include "ivf/error.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <cstring>

using namespace ivf;
using test::cycle;

namespace {

const char* kCyclesHeaderLine = "cycle_id,age,partner_age,attempt,n_oocytes,oocytes_mixed,n_embryos,transfer_done,det,lbe\n";
const char* kEmbryosHeaderLine = "cycle_id,evenness,fragmentation,icsi\n";

// Small cohort covering every stage boundary.
Dataset small_cohort() {
  std::vector<CycleRecord> cycles{
      cycle("a", 30, 32, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt),
      cycle("b", 36, 40, 2, 10, true, 4, true, 1, 0),
      cycle("c", 28, 30, 4, 5, true, 0, false, std::nullopt, std::nullopt),
      cycle("d", 41, 45, 3, 8, true, 1, true, 0, 1),
      cycle("e", 33, 35, 1, 3, false, std::nullopt, false, std::nullopt, std::nullopt),
  };
  std::vector<EmbryoRecord> embryos{{"b", 1, 2, true}, {"b", 3, 3, true}, {"b", 4, 1, true},
                                    {"b", 2, 2, true}, {"d", 3, 4, false}};
  return Dataset(std::move(cycles), std::move(embryos));
}

}  // namespace

TEST_SUITE("load_dataset") {
  TEST_CASE("single zero-oocyte cycle leaves downstream inclusion sets empty") {
    test::TempDir dir("dm");
    test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31.5,33,1,0,0,,0,,\n");
    test::write_file(dir / "embryos.csv", kEmbryosHeaderLine);
    const auto d = load_dataset(dir / "cycles.csv", dir / "embryos.csv");
    CHECK(d.num_cycles() == 1);
    CHECK(d.num_embryos() == 0);
    CHECK(d.units(Submodel::O).size() == 1);
    for (auto s : {Submodel::M, Submodel::E, Submodel::F, Submodel::D, Submodel::L}) CHECK(d.units(s).empty());
  }

  TEST_CASE("embryo referencing an absent cycle names the id and row") {
    test::TempDir dir("dm");
    test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31.5,33,1,2,1,1,1,0,1\n");
    test::write_file(dir / "embryos.csv", std::string(kEmbryosHeaderLine) + "x1,2,2,0\nghost,1,1,1\n");
    try {
      (void)load_dataset(dir / "cycles.csv", dir / "embryos.csv");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("ghost") != std::string::npos);
      REQUIRE(e.row().has_value());
      CHECK(*e.row() == 2);
    }
  }

  TEST_CASE("cohort shaped like the reference clinic is accepted") {
    // 2962 started, 2861 mixed, 12911 embryos, 2501 transfers: 406 transfer
    // cycles carry six embryos, the rest five; 360 mixed cycles yield none.
    std::vector<CycleRecord> cycles;
    std::vector<EmbryoRecord> embryos;
    for (int i = 0; i < 2962; ++i) {
      const auto id = "c" + std::to_string(i);
      if (i >= 2861) {
        cycles.push_back(cycle(id, 33, 35, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt));
      } else if (i >= 2501) {
        cycles.push_back(cycle(id, 33, 35, 1, 4, true, 0, false, std::nullopt, std::nullopt));
      } else {
        const int n_emb = i < 406 ? 6 : 5;
        cycles.push_back(cycle(id, 33, 35, 1, 12, true, n_emb, true, i % 2, i % 3 == 0 ? 1 : 0));
        for (int k = 0; k < n_emb; ++k) embryos.push_back({id, 1 + k % 4, 1 + (k + i) % 4, i % 2 == 0});
      }
    }
    test::TempDir dir("dm");
    write_dataset(Dataset(cycles, embryos), dir / "cycles.csv", dir / "embryos.csv");
    const auto d = load_dataset(dir / "cycles.csv", dir / "embryos.csv");
    CHECK(d.num_cycles() == 2962);
    CHECK(d.units(Submodel::M).size() == 2861);
    CHECK(d.num_embryos() == 12911);
    CHECK(d.units(Submodel::D).size() == 2501);
  }

  TEST_CASE("record invariants are enforced with row numbers") {
    test::TempDir dir("dm");
    test::write_file(dir / "embryos.csv", kEmbryosHeaderLine);
    SUBCASE("not mixed but embryos present") {
      test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31,33,1,4,0,2,0,,\n");
    }
    SUBCASE("transfer absent but DET recorded") {
      test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31,33,1,4,1,0,0,1,\n");
    }
    SUBCASE("zero oocytes yet mixed") {
      test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31,33,1,0,1,0,0,,\n");
    }
    SUBCASE("embryo count disagrees with embryo rows") {
      test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31,33,1,4,1,2,1,0,1\n");
    }
    SUBCASE("malformed number") {
      test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,thirty,33,1,0,0,,0,,\n");
    }
    CHECK_THROWS_AS((void)load_dataset(dir / "cycles.csv", dir / "embryos.csv"), DataError);
  }

  TEST_CASE("attempts four and five are pooled") {
    test::TempDir dir("dm");
    test::write_file(dir / "cycles.csv", std::string(kCyclesHeaderLine) + "x1,31,33,5,0,0,,0,,\nx2,32,33,4,0,0,,0,,\n");
    test::write_file(dir / "embryos.csv", kEmbryosHeaderLine);
    const auto d = load_dataset(dir / "cycles.csv", dir / "embryos.csv");
    CHECK(d.cycles()[0].attempt == 4);
    CHECK(d.cycles()[1].attempt == 4);
  }

  TEST_CASE("write then load reproduces the dataset byte for byte") {
    test::TempDir dir("dm");
    const auto d = small_cohort();
    write_dataset(d, dir / "c1.csv", dir / "e1.csv");
    const auto back = load_dataset(dir / "c1.csv", dir / "e1.csv");
    write_dataset(back, dir / "c2.csv", dir / "e2.csv");
    CHECK(test::read_file(dir / "c1.csv") == test::read_file(dir / "c2.csv"));
    CHECK(test::read_file(dir / "e1.csv") == test::read_file(dir / "e2.csv"));
  }
}

TEST_SUITE("standardize") {
  TEST_CASE("two ages use the n-1 standard deviation") {
    const Dataset d({cycle("a", 30, 30, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt),
                     cycle("b", 36, 31, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt)},
                    {});
    const auto [s, p] = standardize(d, {"age"});
    CHECK(s.cycles()[0].age == doctest::Approx(-0.70710678).epsilon(1e-7));
    CHECK(s.cycles()[1].age == doctest::Approx(0.70710678).epsilon(1e-7));
    CHECK(p.mean[*p.find("age")] == doctest::Approx(33.0));
    CHECK(p.sd_of("age") == doctest::Approx(4.2426407).epsilon(1e-7));
  }

  TEST_CASE("a column already at mean 0 and SD 1 is unchanged") {
    const double a = 1.0 / std::sqrt(2.0);
    const Dataset d({cycle("a", -a, 30, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt),
                     cycle("b", a, 31, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt)},
                    {});
    const auto [s, p] = standardize(d, {"age"});
    CHECK(s.cycles()[0].age == doctest::Approx(-a).epsilon(1e-12));
    CHECK(p.mean[*p.find("age")] == doctest::Approx(0.0));
    CHECK(p.sd_of("age") == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("constant column is rejected") {
    const Dataset d({cycle("a", 30, 30, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt),
                     cycle("b", 30, 31, 1, 0, false, std::nullopt, false, std::nullopt, std::nullopt)},
                    {});
    CHECK_THROWS_AS(standardize(d, {"age"}), DataError);
  }

  TEST_CASE("unstandardize inverts standardize") {
    const auto d = small_cohort();
    const auto [s, p] = standardize(d, {"age", "partner_age"});
    const auto back = unstandardize(s);
    for (std::size_t i = 0; i < d.num_cycles(); ++i) {
      CHECK(std::abs(back.cycles()[i].age - d.cycles()[i].age) <= 1e-12 * std::abs(d.cycles()[i].age));
      CHECK(std::abs(back.cycles()[i].partner_age - d.cycles()[i].partner_age) <=
            1e-12 * std::abs(d.cycles()[i].partner_age));
    }
  }
}

TEST_SUITE("build_design") {
  TEST_CASE("column counts follow the coefficient table layout") {
    const auto [s, p] = standardize(small_cohort(), {"age", "partner_age"});
    const auto pre = build_design(s, Setting::pretreatment);
    CHECK(pre[Submodel::O].X.cols() == 6);
    CHECK(pre[Submodel::M].X.cols() == 3);
    CHECK(pre[Submodel::E].X.cols() == 3);
    CHECK(pre[Submodel::F].X.cols() == 3);
    CHECK(pre[Submodel::D].X.cols() == 6);
    CHECK(pre[Submodel::L].X.cols() == 3);
    CHECK(pre[Submodel::L].columns == std::vector<std::string>{"intercept", "age", "partner_age"});

    const auto dyn = build_design(s, Setting::dynamic);
    CHECK(dyn[Submodel::E].X.cols() == 5);
    CHECK(dyn[Submodel::D].X.cols() == 10);
    CHECK(dyn[Submodel::L].X.cols() == 8);
    CHECK(dyn[Submodel::L].columns.back() == "det");
  }

  TEST_CASE("inclusion sets are nested") {
    const auto d = small_cohort();
    CHECK(d.units(Submodel::O).size() == 5);
    CHECK(d.units(Submodel::M) == std::vector<std::size_t>{1, 2, 3});
    CHECK(d.units(Submodel::D) == std::vector<std::size_t>{1, 3});
    CHECK(d.units(Submodel::L) == d.units(Submodel::D));
    CHECK(d.units(Submodel::E).size() == 5);
    for (auto e : d.units(Submodel::E)) {
      const auto c = d.find_cycle(d.embryos()[e].cycle_id);
      REQUIRE(c.has_value());
      CHECK(d.cycles()[*c].n_embryos.value_or(0) >= 1);
      CHECK(d.cycles()[*c].oocytes_mixed);
    }
  }

  TEST_CASE("fertilisation rate is embryos over oocytes") {
    CycleState st;
    st.n_oocytes = 10;
    st.n_embryos = 4;
    CHECK(raw_covariate(Covariate::fert_rate, st, false).value() == doctest::Approx(0.4));
  }

  TEST_CASE("identical inputs give bit-identical matrices") {
    const auto [s, p] = standardize(small_cohort(), {"age", "partner_age"});
    const auto a = build_design(s, Setting::dynamic);
    const auto b = build_design(s, Setting::dynamic);
    for (auto sm : kAllSubmodels) {
      REQUIRE(a[sm].X.size() == b[sm].X.size());
      CHECK(std::memcmp(a[sm].X.data(), b[sm].X.data(), sizeof(double) * static_cast<std::size_t>(a[sm].X.size())) == 0);
    }
  }

  TEST_CASE("dynamic design needs upstream outcomes for included units") {
    CycleState st;
    st.n_oocytes = 5;
    Eigen::MatrixXd row(1, design_width(Submodel::E, CovariateSpec::defaults(Setting::dynamic)));
    StandardizationParams derived;
    derived.set("n_oocytes", 8, 3);
    derived.set("fert_rate", 0.5, 0.2);
    CHECK_THROWS_AS(fill_design_row(Submodel::E, CovariateSpec::defaults(Setting::dynamic), derived, st, false, row.row(0)),
                    DataError);
  }

  TEST_CASE("unstandardized data is rejected") {
    CHECK_THROWS_AS(build_design(small_cohort(), Setting::pretreatment), DataError);
  }
}
