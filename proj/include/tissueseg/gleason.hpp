#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace tissueseg {

// Gleason pattern classes. The integer value doubles as the class index in
// masks, logits and node labels.
enum class Pattern : int { B = 0, G3 = 1, G4 = 2, G5 = 3 };

inline constexpr int kNumPatterns = 4;
inline constexpr std::array<Pattern, kNumPatterns> kAllPatterns = {Pattern::B, Pattern::G3,
                                                                   Pattern::G4, Pattern::G5};

constexpr int index_of(Pattern p) { return static_cast<int>(p); }
Pattern pattern_from_index(int idx);

std::string_view to_string(Pattern p);
// Accepts "B", "G3", "G4", "G5".
Pattern parse_pattern(std::string_view s);

// Numeric Gleason value (3, 4, 5); benign has none.
int gleason_value(Pattern p);

// Slide-level label: primary (worst) and secondary (second-worst) pattern.
// Benign primary holds iff benign secondary.
struct GleasonLabel {
  Pattern primary = Pattern::B;
  Pattern secondary = Pattern::B;

  bool benign() const { return primary == Pattern::B; }
  // Sum of pattern values, 0 for benign.
  int score() const;
  // Composite grade string: "B" or "<p>+<s>", e.g. "3+4".
  std::string grade() const;

  bool operator==(const GleasonLabel&) const = default;
};

// Throws DataError when primary/secondary disagree on benignity.
GleasonLabel make_label(Pattern primary, Pattern secondary);

// B -> 0, 3+3 -> 1, 3+4 -> 2, 4+3 -> 3, score 8 -> 4, score >= 9 -> 5.
int gleason_to_isup(const GleasonLabel& label);

// Result of decoding two head argmaxes into a valid label.
struct DecodedLabel {
  GleasonLabel label;
  bool coerced = false;
};

// Benign primary forces benign secondary; a benign secondary under a
// malignant primary is replaced by the primary.
DecodedLabel decode_label(Pattern primary_argmax, Pattern secondary_argmax);

}  // namespace tissueseg
