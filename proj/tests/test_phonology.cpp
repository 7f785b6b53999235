#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>
#include <sstream>

#include "acc/phonology.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace acc;

namespace {

std::string shipped_map_text() { return testutil::slurp(ACC_DEFAULT_PHONEME_MAP); }

// Drops every data line whose phoneme column equals sym.
std::string drop_symbol(const std::string& text, const std::string& sym) {
    std::istringstream in(text);
    std::string out, line;
    while (std::getline(in, line)) {
        if (line.rfind(sym + "\t", 0) != 0) out += line + "\n";
    }
    return out;
}

std::string replace_line(const std::string& text, const std::string& sym,
                         const std::string& repl) {
    return drop_symbol(text, sym) + repl + "\n";
}

}  // namespace

TEST_CASE("class inventories have the fixed sizes and order") {
    CHECK(n_classes(Dimension::Manner) == 6);
    CHECK(n_classes(Dimension::Place) == 8);
    CHECK(n_classes(Dimension::Voicing) == 3);

    const std::vector<std::string> manner = {"Silence",     "Stop",  "Nasal", "Fricative",
                                             "Approximant", "Vowel"};
    const std::vector<std::string> place = {"Silence",      "Labial",  "Dental", "Alveolar",
                                            "Postalveolar", "Palatal", "Velar",  "Glottal"};
    const std::vector<std::string> voicing = {"Silence", "Voiceless", "Voiced"};
    CHECK(classes(Dimension::Manner) == manner);
    CHECK(classes(Dimension::Place) == place);
    CHECK(classes(Dimension::Voicing) == voicing);

    for (Dimension d : kDimensions) {
        CHECK(classes(d)[0] == "Silence");
        for (int i = 0; i < n_classes(d); ++i) CHECK(class_index(d, classes(d)[i]) == i);
        CHECK_THROWS_AS(class_index(d, "NoSuchClass"), ParseError);
    }
}

TEST_CASE("dimension names round-trip") {
    for (Dimension d : kDimensions) CHECK(dim_from_name(dim_name(d)) == d);
    CHECK(dim_name(Dimension::Manner) == "manner");
    CHECK(dim_name(Dimension::Place) == "place");
    CHECK(dim_name(Dimension::Voicing) == "voicing");
    CHECK_THROWS_AS(dim_from_name("pitch"), ParseError);
}

TEST_CASE("stress digits are stripped, other symbols untouched") {
    CHECK(strip_stress("AA1") == "AA");
    CHECK(strip_stress("UW0") == "UW");
    CHECK(strip_stress("EY2") == "EY");
    CHECK(strip_stress("AA") == "AA");
    CHECK(strip_stress("N") == "N");
    CHECK(strip_stress("SIL") == "SIL");
}

TEST_CASE("shipped mapping file loads and matches the fixed class oracle") {
    PhonemeMap pm = PhonemeMap::load(ACC_DEFAULT_PHONEME_MAP);

    CHECK(pm.inventory().size() == required_inventory().size());
    for (const auto& sym : required_inventory()) CHECK(pm.contains(sym));

    auto manner = [&](const char* p) { return pm.class_of(p, Dimension::Manner).name; };
    auto place = [&](const char* p) { return pm.class_of(p, Dimension::Place).name; };
    auto voicing = [&](const char* p) { return pm.class_of(p, Dimension::Voicing).name; };

    CHECK(manner("SIL") == "Silence");
    CHECK(place("SIL") == "Silence");
    CHECK(voicing("SIL") == "Silence");

    for (const char* p : {"P", "T", "K", "B", "D", "G"}) CHECK(manner(p) == "Stop");
    for (const char* p : {"N", "M", "NG"}) CHECK(manner(p) == "Nasal");
    for (const char* p : {"S", "SH", "Z", "F"}) CHECK(manner(p) == "Fricative");
    CHECK(manner("Y") == "Approximant");
    for (const char* p : {"AA", "EY", "IY", "OW", "UW"}) CHECK(manner(p) == "Vowel");

    for (const char* p : {"P", "B", "M", "F", "V"}) CHECK(place(p) == "Labial");
    for (const char* p : {"TH", "DH"}) CHECK(place(p) == "Dental");
    for (const char* p : {"T", "D", "N"}) CHECK(place(p) == "Alveolar");
    CHECK(place("SH") == "Postalveolar");
    CHECK(place("Y") == "Palatal");
    for (const char* p : {"K", "G", "NG"}) CHECK(place(p) == "Velar");
    CHECK(place("HH") == "Glottal");

    for (const char* p : {"P", "T", "K", "SH", "S"}) CHECK(voicing(p) == "Voiceless");
    for (const char* p : {"M", "N", "B", "D", "G", "AA"}) CHECK(voicing(p) == "Voiced");

    // vowels carry no place label
    CHECK(pm.place_excluded("AA"));
    CHECK(pm.place_excluded("AA1"));
    CHECK_FALSE(pm.place_excluded("P"));

    CHECK(pm.class_of("AA2", Dimension::Voicing).name == "Voiced");
    CHECK(pm.lookup("UW1").manner == class_index(Dimension::Manner, "Vowel"));

    CHECK_THROWS_AS(pm.lookup("QQ"), UnknownPhoneme);
    CHECK_THROWS_AS(pm.class_of("ZZTOP", Dimension::Manner), UnknownPhoneme);
}

TEST_CASE("incomplete inventory is rejected") {
    const std::string text = drop_symbol(shipped_map_text(), "K");
    CHECK_THROWS_AS(PhonemeMap::parse(text, "t"), IncompleteMap);
}

TEST_CASE("assignments contradicting the fixed table are rejected") {
    CHECK_THROWS_AS(
        PhonemeMap::parse(replace_line(shipped_map_text(), "P", "P\tNasal\tLabial\tVoiceless"),
                          "t"),
        ContradictsClassTable);
    CHECK_THROWS_AS(
        PhonemeMap::parse(replace_line(shipped_map_text(), "SH", "SH\tFricative\tVelar\tVoiceless"),
                          "t"),
        ContradictsClassTable);
    CHECK_THROWS_AS(
        PhonemeMap::parse(replace_line(shipped_map_text(), "M", "M\tNasal\tLabial\tVoiceless"),
                          "t"),
        ContradictsClassTable);
    // the oracle pins Y's place, so excluding it also contradicts
    CHECK_THROWS_AS(
        PhonemeMap::parse(replace_line(shipped_map_text(), "Y", "Y\tApproximant\tEXCLUDED\tVoiced"),
                          "t"),
        ContradictsClassTable);
}

TEST_CASE("malformed mapping lines are rejected with line numbers") {
    const std::string good = shipped_map_text();

    CHECK_THROWS_AS(PhonemeMap::parse(good + "XX\tVowel\n", "t"), ParseError);
    CHECK_THROWS_AS(PhonemeMap::parse(good + "XX\tVowel\tEXCLUDED\tVoiced\textra\n", "t"),
                    ParseError);
    CHECK_THROWS_AS(PhonemeMap::parse(good + "XX\tSinger\tVelar\tVoiced\n", "t"), ParseError);
    CHECK_THROWS_AS(PhonemeMap::parse(good + "P\tStop\tLabial\tVoiceless\n", "t"), ParseError);
    // EXCLUDED is a place-only keyword
    CHECK_THROWS_AS(PhonemeMap::parse(replace_line(good, "AA", "AA\tEXCLUDED\tEXCLUDED\tVoiced"),
                                      "t"),
                    ParseError);

    try {
        PhonemeMap::parse(good + "XX\tVowel\n", "origin");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("origin:") != std::string::npos);
    }
}

TEST_CASE("comments and blank lines are ignored") {
    const std::string text = "# heading\n\n" + shipped_map_text() + "\n# trailing\n";
    PhonemeMap pm = PhonemeMap::parse(text, "t");
    CHECK(pm.contains("SIL"));
}
