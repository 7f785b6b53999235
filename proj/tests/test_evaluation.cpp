#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>

#include "acc/evaluation.hpp"
#include "acc/rng.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace acc;

namespace {

ConfusionMatrix fixture_cm() {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 8;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 3;
    cm.at(1, 1) = 7;
    return cm;
}

std::vector<Prf> random_metrics(Rng& rng, size_t n) {
    std::vector<Prf> out(n);
    for (Prf& m : out) {
        m.precision = real(rng.uniform());
        m.recall = real(rng.uniform());
        const real pr = m.precision + m.recall;
        m.f1 = pr > 0 ? 2 * m.precision * m.recall / pr : real(0);
    }
    return out;
}

}  // namespace

TEST_CASE("confusion tallies unmasked frames") {
    SUBCASE("perfect predictions land on the diagonal") {
        const std::vector<int> y = {0, 1, 2, 1, 0};
        ConfusionMatrix cm = confusion(y, y, std::vector<uint8_t>(5, 1), 3);
        CHECK(cm.total() == 5);
        CHECK(cm.at(0, 0) == 2);
        CHECK(cm.at(1, 1) == 2);
        CHECK(cm.at(2, 2) == 1);
        CHECK(accuracy(cm) == real(1));
    }

    SUBCASE("a fully masked batch gives an empty matrix") {
        ConfusionMatrix cm = confusion({0, 1}, {1, 0}, {0, 0}, 2);
        CHECK(cm.total() == 0);
        CHECK(accuracy(cm) == real(0));
    }

    SUBCASE("random case equals the brute-force tally") {
        Rng rng(40);
        const int C = 5;
        std::vector<int> preds, labels;
        std::vector<uint8_t> mask;
        for (int i = 0; i < 500; ++i) {
            preds.push_back(static_cast<int>(rng.below(C)));
            labels.push_back(static_cast<int>(rng.below(C)));
            mask.push_back(rng.bernoulli(0.8) ? 1 : 0);
        }
        ConfusionMatrix cm = confusion(preds, labels, mask, C);
        int64_t kept = 0;
        for (int y = 0; y < C; ++y)
            for (int p = 0; p < C; ++p) {
                int64_t want = 0;
                for (int i = 0; i < 500; ++i)
                    if (mask[i] && labels[i] == y && preds[i] == p) ++want;
                CHECK(cm.at(y, p) == want);
                kept += want;
            }
        CHECK(cm.total() == kept);

        int64_t agree = 0, seen = 0;
        for (int i = 0; i < 500; ++i) {
            if (!mask[i]) continue;
            ++seen;
            if (preds[i] == labels[i]) ++agree;
        }
        CHECK(accuracy(cm) == doctest::Approx(double(agree) / double(seen)));
    }

    SUBCASE("rejects malformed input") {
        CHECK_THROWS_AS(confusion({0}, {0, 1}, {1, 1}, 2), LengthMismatch);
        CHECK_THROWS_AS(confusion({2}, {0}, {1}, 2), IndexOutOfRange);
        CHECK_THROWS_AS(confusion({0}, {-1}, {1}, 2), IndexOutOfRange);
        CHECK_THROWS_AS(confusion({}, {}, {}, 0), UsageError);
    }
}

TEST_CASE("per-class metrics and macro averages") {
    SUBCASE("perfect diagonal scores 1 everywhere") {
        ConfusionMatrix cm(3);
        cm.at(0, 0) = 4;
        cm.at(1, 1) = 2;
        cm.at(2, 2) = 9;
        for (const Prf& m : prf(cm)) {
            CHECK(m.precision == real(1));
            CHECK(m.recall == real(1));
            CHECK(m.f1 == real(1));
        }
        CHECK(macro(prf(cm)).f1 == real(1));
    }

    SUBCASE("a class never seen nor predicted scores 0 by convention") {
        ConfusionMatrix cm(3);
        cm.at(0, 0) = 5;
        cm.at(1, 1) = 5;
        const std::vector<Prf> m = prf(cm);
        CHECK(m[2].precision == real(0));
        CHECK(m[2].recall == real(0));
        CHECK(m[2].f1 == real(0));
    }

    SUBCASE("two-class fixture matches hand arithmetic") {
        const std::vector<Prf> m = prf(fixture_cm());
        CHECK(m[0].precision == doctest::Approx(8.0 / 11.0).epsilon(1e-12));
        CHECK(m[0].recall == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(m[0].f1 == doctest::Approx(16.0 / 21.0).epsilon(1e-12));
        CHECK(m[1].precision == doctest::Approx(7.0 / 9.0).epsilon(1e-12));
        CHECK(m[1].recall == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(m[1].f1 == doctest::Approx(14.0 / 19.0).epsilon(1e-12));

        const Prf avg = macro(m);
        CHECK(avg.precision == doctest::Approx((8.0 / 11.0 + 7.0 / 9.0) / 2).epsilon(1e-12));
        CHECK(avg.recall == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(avg.f1 == doctest::Approx((16.0 / 21.0 + 14.0 / 19.0) / 2).epsilon(1e-12));
        CHECK(accuracy(fixture_cm()) == doctest::Approx(0.75));
    }

    SUBCASE("macro means are plain unweighted averages") {
        std::vector<Prf> two(2);
        two[0].f1 = real(0.8);
        two[1].f1 = real(0.6);
        CHECK(macro(two).f1 == doctest::Approx(0.7).epsilon(1e-12));

        std::vector<Prf> three(3);
        three[0].f1 = real(0.93);
        three[1].f1 = real(0.82);
        three[2].f1 = real(0.89);
        CHECK(macro(three).f1 == doctest::Approx(0.88).epsilon(1e-9));
        CHECK_THROWS_AS(macro({}), UsageError);
    }

    SUBCASE("metrics stay within [0, 1] on random matrices") {
        Rng rng(41);
        for (int trial = 0; trial < 30; ++trial) {
            const int C = 2 + static_cast<int>(rng.below(6));
            ConfusionMatrix cm(C);
            for (int64_t& c : cm.counts) c = static_cast<int64_t>(rng.below(20));
            for (const Prf& m : prf(cm)) {
                CHECK(m.precision >= 0);
                CHECK(m.precision <= 1);
                CHECK(m.recall >= 0);
                CHECK(m.recall <= 1);
                CHECK(m.f1 >= 0);
                CHECK(m.f1 <= 1);
            }
            const Prf avg = macro(prf(cm));
            CHECK(avg.f1 >= 0);
            CHECK(avg.f1 <= 1);
        }
    }

    SUBCASE("partial tallies merge into the full matrix") {
        Rng rng(42);
        std::vector<int> preds, labels;
        std::vector<uint8_t> mask;
        for (int i = 0; i < 200; ++i) {
            preds.push_back(static_cast<int>(rng.below(4)));
            labels.push_back(static_cast<int>(rng.below(4)));
            mask.push_back(1);
        }
        ConfusionMatrix whole = confusion(preds, labels, mask, 4);
        auto part = [&](size_t lo, size_t hi) {
            return confusion(std::vector<int>(preds.begin() + lo, preds.begin() + hi),
                             std::vector<int>(labels.begin() + lo, labels.begin() + hi),
                             std::vector<uint8_t>(mask.begin() + lo, mask.begin() + hi), 4);
        };
        ConfusionMatrix merged = part(0, 130);
        merged.merge(part(130, 200));
        CHECK(merged.counts == whole.counts);
        ConfusionMatrix other(3);
        CHECK_THROWS_AS(merged.merge(other), ShapeMismatch);
    }
}

TEST_CASE("metrics CSV round-trips at full precision") {
    const std::string dir = testutil::fresh_dir("metrics_csv");
    Rng rng(43);
    std::vector<MetricColumn> cols = {{"univ", random_metrics(rng, 6)},
                                      {"fusion", random_metrics(rng, 6)}};
    const auto path = std::filesystem::path(dir) / "manner.csv";
    write_metrics_csv(path, Dimension::Manner, cols);

    const MetricsTable table = read_metrics_csv(path);
    REQUIRE(table.rows.size() == 7);  // 6 classes + AVG
    CHECK(table.rows.front() == "Silence");
    CHECK(table.rows.back() == "AVG");
    REQUIRE(table.columns.size() == 6);
    CHECK(table.columns[0] == "univ_precision");
    CHECK(table.columns[5] == "fusion_f1");
    for (size_t c = 0; c < 6; ++c) {
        CHECK(table.values[c][0] == cols[0].per_class[c].precision);
        CHECK(table.values[c][2] == cols[0].per_class[c].f1);
        CHECK(table.values[c][4] == cols[1].per_class[c].recall);
    }
    const Prf avg = macro(cols[1].per_class);
    CHECK(table.values[6][5] == avg.f1);

    SUBCASE("identical inputs give identical bytes") {
        const auto again = std::filesystem::path(dir) / "again.csv";
        write_metrics_csv(again, Dimension::Manner, cols);
        CHECK(testutil::slurp(again.string()) == testutil::slurp(path.string()));
    }

    SUBCASE("malformed tables are rejected") {
        const auto bad = std::filesystem::path(dir) / "bad.csv";
        testutil::spit(bad.string(), "not,a,metrics\nfile,1,2\n");
        CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
        testutil::spit(bad.string(), "class,univ_f1\nSilence,0.5\n");  // no AVG row
        CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
        testutil::spit(bad.string(), "class,univ_f1\nSilence,0.5,0.6\nAVG,0.5\n");
        CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
        testutil::spit(bad.string(), "class,univ_f1\nSilence,zero\nAVG,0.5\n");
        CHECK_THROWS_AS(read_metrics_csv(bad), ParseError);
    }

    SUBCASE("column row counts must match the dimension") {
        cols[0].per_class.pop_back();
        CHECK_THROWS_AS(write_metrics_csv(path, Dimension::Manner, cols), ShapeMismatch);
    }
}

TEST_CASE("svg bar chart is deterministic and complete") {
    std::vector<F1Bar> bars;
    for (const char* dim : {"manner", "place", "voicing"})
        for (const char* mode : {"univ", "unia", "fusion", "contrast"})
            bars.push_back({dim, mode, real(0.31 + 0.04 * bars.size())});

    const std::string a = render_f1_svg(bars);
    const std::string b = render_f1_svg(bars);
    CHECK(a == b);
    CHECK(a.rfind("<svg ", 0) == 0);
    CHECK(a.find("</svg>\n") != std::string::npos);

    size_t rects = 0;
    for (size_t pos = a.find("<rect"); pos != std::string::npos; pos = a.find("<rect", pos + 1))
        ++rects;
    CHECK(rects == bars.size() + 1);  // one background rect
    CHECK(a.find("manner") != std::string::npos);
    CHECK(a.find("contrast") != std::string::npos);
    CHECK(a.find("0.31") != std::string::npos);

    CHECK_THROWS_AS(render_f1_svg({}), UsageError);

    const std::string dir = testutil::fresh_dir("svg");
    const auto path = std::filesystem::path(dir) / "f1.svg";
    write_f1_svg(path, bars);
    CHECK(testutil::slurp(path.string()) == a);
}

TEST_CASE("confusion json round-trips") {
    const std::string dir = testutil::fresh_dir("confusion_json");
    Rng rng(44);
    ConfusionMatrix cm(3);
    for (int64_t& c : cm.counts) c = static_cast<int64_t>(rng.below(50));
    const auto path = std::filesystem::path(dir) / "confusion.json";
    write_confusion_json(path, Dimension::Voicing, cm);

    Dimension dim = Dimension::Manner;
    ConfusionMatrix back = read_confusion_json(path, &dim);
    CHECK(dim == Dimension::Voicing);
    CHECK(back.counts == cm.counts);

    CHECK_THROWS_AS(write_confusion_json(path, Dimension::Manner, cm), ShapeMismatch);
    testutil::spit(path.string(), "{\"dimension\": \"voicing\"}");
    CHECK_THROWS_AS(read_confusion_json(path), FormatError);
    testutil::spit(path.string(), "nonsense");
    CHECK_THROWS_AS(read_confusion_json(path), FormatError);
}

TEST_CASE("terminal summary lists every class and the average") {
    Rng rng(45);
    std::vector<MetricColumn> cols = {{"contrast", random_metrics(rng, 3)}};
    const std::string text = format_metrics(Dimension::Voicing, cols);
    for (const std::string& name : classes(Dimension::Voicing))
        CHECK(text.find(name) != std::string::npos);
    CHECK(text.find("AVG") != std::string::npos);
    CHECK(text.find("contrast F1") != std::string::npos);
    CHECK(text.find("unweighted mean") != std::string::npos);
}
