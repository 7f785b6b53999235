#include "acc/phonology.hpp"

#include <fstream>
#include <sstream>

namespace acc {

namespace {

const std::vector<std::string> kMannerClasses = {"Silence",   "Stop",        "Nasal",
                                                 "Fricative", "Approximant", "Vowel"};
const std::vector<std::string> kPlaceClasses = {"Silence",      "Labial",  "Dental", "Alveolar",
                                                "Postalveolar", "Palatal", "Velar",  "Glottal"};
const std::vector<std::string> kVoicingClasses = {"Silence", "Voiceless", "Voiced"};

const std::string kDimNames[3] = {"manner", "place", "voicing"};

// Consistency oracle: class assignments that are fixed, not editable data.
// A mapping file disagreeing with any of these is rejected. The SIL rows
// encode the sentinel rule (silence in every dimension).
struct OracleEntry {
    const char* symbol;
    Dimension dim;
    const char* cls;
};

const OracleEntry kOracle[] = {
    {"SIL", Dimension::Manner, "Silence"},
    {"SIL", Dimension::Place, "Silence"},
    {"SIL", Dimension::Voicing, "Silence"},
    // Manner.
    {"P", Dimension::Manner, "Stop"},
    {"T", Dimension::Manner, "Stop"},
    {"K", Dimension::Manner, "Stop"},
    {"B", Dimension::Manner, "Stop"},
    {"D", Dimension::Manner, "Stop"},
    {"G", Dimension::Manner, "Stop"},
    {"N", Dimension::Manner, "Nasal"},
    {"M", Dimension::Manner, "Nasal"},
    {"NG", Dimension::Manner, "Nasal"},
    {"S", Dimension::Manner, "Fricative"},
    {"SH", Dimension::Manner, "Fricative"},
    {"Z", Dimension::Manner, "Fricative"},
    {"F", Dimension::Manner, "Fricative"},
    {"Y", Dimension::Manner, "Approximant"},
    {"AA", Dimension::Manner, "Vowel"},
    {"EY", Dimension::Manner, "Vowel"},
    {"IY", Dimension::Manner, "Vowel"},
    {"OW", Dimension::Manner, "Vowel"},
    {"UW", Dimension::Manner, "Vowel"},
    // Place.
    {"P", Dimension::Place, "Labial"},
    {"B", Dimension::Place, "Labial"},
    {"M", Dimension::Place, "Labial"},
    {"F", Dimension::Place, "Labial"},
    {"V", Dimension::Place, "Labial"},
    {"TH", Dimension::Place, "Dental"},
    {"DH", Dimension::Place, "Dental"},
    {"T", Dimension::Place, "Alveolar"},
    {"D", Dimension::Place, "Alveolar"},
    {"N", Dimension::Place, "Alveolar"},
    {"SH", Dimension::Place, "Postalveolar"},
    {"Y", Dimension::Place, "Palatal"},
    {"K", Dimension::Place, "Velar"},
    {"G", Dimension::Place, "Velar"},
    {"NG", Dimension::Place, "Velar"},
    {"HH", Dimension::Place, "Glottal"},
    // Voicing.
    {"P", Dimension::Voicing, "Voiceless"},
    {"T", Dimension::Voicing, "Voiceless"},
    {"K", Dimension::Voicing, "Voiceless"},
    {"SH", Dimension::Voicing, "Voiceless"},
    {"S", Dimension::Voicing, "Voiceless"},
    {"M", Dimension::Voicing, "Voiced"},
    {"N", Dimension::Voicing, "Voiced"},
    {"B", Dimension::Voicing, "Voiced"},
    {"D", Dimension::Voicing, "Voiced"},
    {"G", Dimension::Voicing, "Voiced"},
    {"AA", Dimension::Voicing, "Voiced"},
};

const std::vector<std::string> kRequired = {
    "SIL", "P",  "B",  "T",  "D",  "K",  "G",  "CH", "JH", "F",  "V",  "TH", "DH", "S",
    "Z",   "SH", "ZH", "HH", "M",  "N",  "NG", "L",  "R",  "W",  "Y",  "AA", "AE", "AH",
    "AO",  "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"};

int dim_ordinal(Dimension d) { return static_cast<int>(d); }

}  // namespace

const std::string& dim_name(Dimension d) { return kDimNames[dim_ordinal(d)]; }

Dimension dim_from_name(const std::string& name) {
    for (Dimension d : kDimensions)
        if (name == dim_name(d)) return d;
    throw ParseError("unknown dimension: " + name);
}

const std::vector<std::string>& classes(Dimension d) {
    switch (d) {
        case Dimension::Manner: return kMannerClasses;
        case Dimension::Place: return kPlaceClasses;
        case Dimension::Voicing: return kVoicingClasses;
    }
    throw LogicError("bad Dimension value");
}

int n_classes(Dimension d) { return static_cast<int>(classes(d).size()); }

int class_index(Dimension d, const std::string& name) {
    const auto& cs = classes(d);
    for (size_t i = 0; i < cs.size(); ++i)
        if (cs[i] == name) return static_cast<int>(i);
    throw ParseError("unknown " + dim_name(d) + " class: " + name);
}

std::string strip_stress(const std::string& symbol) {
    size_t n = symbol.size();
    while (n > 0 && symbol[n - 1] >= '0' && symbol[n - 1] <= '9') --n;
    return symbol.substr(0, n);
}

const std::vector<std::string>& required_inventory() { return kRequired; }

PhonemeMap PhonemeMap::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open phoneme map: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

PhonemeMap PhonemeMap::parse(const std::string& text, const std::string& origin) {
    PhonemeMap pm;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = origin + ":" + std::to_string(lineno);

        std::vector<std::string> fields;
        size_t pos = 0;
        while (true) {
            size_t tab = line.find('\t', pos);
            fields.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        if (fields.size() != 4)
            throw ParseError(where + ": expected 4 tab-separated fields, got " +
                             std::to_string(fields.size()));
        const std::string& symbol = fields[0];
        if (symbol.empty()) throw ParseError(where + ": empty phoneme symbol");
        if (pm.entries_.count(symbol)) throw ParseError(where + ": duplicate phoneme " + symbol);

        PhonemeClasses pc;
        try {
            pc.manner = class_index(Dimension::Manner, fields[1]);
            if (fields[2] == "EXCLUDED") {
                pc.place = 0;
                pc.place_excluded = true;
            } else {
                pc.place = class_index(Dimension::Place, fields[2]);
            }
            pc.voicing = class_index(Dimension::Voicing, fields[3]);
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }
        pm.entries_.emplace(symbol, pc);
        pm.order_.push_back(symbol);
    }

    for (const std::string& need : kRequired)
        if (!pm.entries_.count(need))
            throw IncompleteMap(origin + ": required phoneme " + need + " is missing");

    for (const OracleEntry& e : kOracle) {
        auto it = pm.entries_.find(e.symbol);
        if (it == pm.entries_.end())
            throw IncompleteMap(origin + ": required phoneme " + std::string(e.symbol) +
                                " is missing");
        const PhonemeClasses& pc = it->second;
        int got;
        bool excluded = false;
        switch (e.dim) {
            case Dimension::Manner: got = pc.manner; break;
            case Dimension::Place:
                got = pc.place;
                excluded = pc.place_excluded;
                break;
            default: got = pc.voicing; break;
        }
        const int want = class_index(e.dim, e.cls);
        if (got != want || excluded)
            throw ContradictsClassTable(origin + ": " + e.symbol + " must map to " + e.cls +
                                    " under " + dim_name(e.dim) + ", got " +
                                    (excluded ? std::string("EXCLUDED")
                                              : classes(e.dim)[static_cast<size_t>(got)]));
    }
    return pm;
}

const PhonemeClasses& PhonemeMap::lookup(const std::string& phoneme) const {
    auto it = entries_.find(strip_stress(phoneme));
    if (it == entries_.end()) throw UnknownPhoneme("phoneme not in inventory: " + phoneme);
    return it->second;
}

bool PhonemeMap::contains(const std::string& phoneme) const {
    return entries_.count(strip_stress(phoneme)) != 0;
}

bool PhonemeMap::place_excluded(const std::string& phoneme) const {
    return lookup(phoneme).place_excluded;
}

PhonologicalClass PhonemeMap::class_of(const std::string& phoneme, Dimension d) const {
    const PhonemeClasses& pc = lookup(phoneme);
    int idx;
    switch (d) {
        case Dimension::Manner: idx = pc.manner; break;
        case Dimension::Place: idx = pc.place; break;
        default: idx = pc.voicing; break;
    }
    return {d, idx, classes(d)[static_cast<size_t>(idx)]};
}

}  // namespace acc
