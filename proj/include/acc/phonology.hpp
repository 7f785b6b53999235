#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "acc/common.hpp"

namespace acc {

// The three articulatory dimensions. Each has a fixed, ordered class list
// with Silence at index 0.
enum class Dimension { Manner, Place, Voicing };

constexpr std::array<Dimension, 3> kDimensions = {Dimension::Manner, Dimension::Place,
                                                  Dimension::Voicing};

const std::string& dim_name(Dimension d);
Dimension dim_from_name(const std::string& name);  // throws ParseError

// Ordered class names. Manner has 6, Place 8, Voicing 3.
const std::vector<std::string>& classes(Dimension d);
int n_classes(Dimension d);
int class_index(Dimension d, const std::string& name);  // throws ParseError

struct PhonologicalClass {
    Dimension dim;
    int index;
    std::string name;
};

// ARPABET stress digits do not affect any class, so "AA1" -> "AA".
std::string strip_stress(const std::string& symbol);

inline const std::string kSil = "SIL";

// Classes of one phoneme across all three dimensions. A phoneme whose place
// is excluded still carries a placeholder place index (Silence) so lookups
// stay total; the flag tells the labeling stage to mask such frames for the
// place task.
struct PhonemeClasses {
    int manner = 0;
    int place = 0;
    int voicing = 0;
    bool place_excluded = false;
};

class PhonemeMap {
  public:
    // Parses and validates the mapping file eagerly: the required inventory
    // must be covered (IncompleteMap), and every class assignment that the
    // embedded consistency oracle pins down must match (ContradictsClassTable).
    static PhonemeMap load(const std::string& path);
    static PhonemeMap parse(const std::string& text, const std::string& origin);

    PhonologicalClass class_of(const std::string& phoneme, Dimension d) const;
    const PhonemeClasses& lookup(const std::string& phoneme) const;  // throws UnknownPhoneme
    bool contains(const std::string& phoneme) const;
    bool place_excluded(const std::string& phoneme) const;

    // File order.
    const std::vector<std::string>& inventory() const { return order_; }

  private:
    std::unordered_map<std::string, PhonemeClasses> entries_;
    std::vector<std::string> order_;
};

// Symbols every mapping file must cover: SIL plus the 39-phoneme ARPABET set.
const std::vector<std::string>& required_inventory();

}  // namespace acc
