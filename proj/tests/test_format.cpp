#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"

#include "impact/error.hpp"
#include "impact/format.hpp"
#include "impact/rng.hpp"

using namespace impact;

TEST_CASE("shortest decimal text round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 17.25, -2.5e-300, 123456789.125, 7.4545}) {
        CHECK(parse_double(format_double(v)).value() == v);
    }
}

TEST_CASE("number parsing rejects partial input") {
    CHECK_FALSE(parse_double("abc").has_value());
    CHECK_FALSE(parse_double("1.5x").has_value());
    CHECK_FALSE(parse_int("12.5").has_value());
    CHECK(parse_int("+42").value() == 42);
    CHECK(parse_int(" -7 ").value() == -7);
    CHECK(parse_double("1e-3").value() == 1e-3);
}

TEST_CASE("split keeps empty fields") {
    const auto f = split("a,,b", ',');
    REQUIRE(f.size() == 3);
    CHECK(f[1].empty());
}

TEST_CASE("key-value settings") {
    std::istringstream in("# comment\nlag = 500\nconvention=post_trade\nflag = yes\nratio = 0.25 # trailing\n");
    const auto kv = KeyValues::parse(in);
    CHECK(kv.integer("lag").value() == 500);
    CHECK(kv.text("convention").value() == "post_trade");
    CHECK(kv.flag("flag").value());
    CHECK(kv.number("ratio").value() == 0.25);
    CHECK_FALSE(kv.contains("missing"));

    std::istringstream bad("no equals sign here\n");
    CHECK_THROWS_AS(KeyValues::parse(bad), ConfigError);
    std::istringstream typed("lag = many\n");
    const auto kv2 = KeyValues::parse(typed);
    CHECK_THROWS_AS(kv2.integer("lag"), ConfigError);
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(7), b(7), c(8);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        CHECK(x == b.next());
        differs = differs || x != c.next();
    }
    CHECK(differs);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("rng distributions have the right moments") {
    Rng r(123);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    std::set<std::uint64_t> seen;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
        seen.insert(r.below(6));
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(seen == std::set<std::uint64_t>{0, 1, 2, 3, 4, 5});
    CHECK(r.uniform_pos() > 0.0);
}
