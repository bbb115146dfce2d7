#include "tissueseg/gleason.hpp"

#include "tissueseg/errors.hpp"

namespace tissueseg {

Pattern pattern_from_index(int idx) {
  if (idx < 0 || idx >= kNumPatterns) {
    throw DataError("pattern index out of range: " + std::to_string(idx));
  }
  return static_cast<Pattern>(idx);
}

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::B: return "B";
    case Pattern::G3: return "G3";
    case Pattern::G4: return "G4";
    case Pattern::G5: return "G5";
  }
  return "?";
}

Pattern parse_pattern(std::string_view s) {
  if (s == "B") return Pattern::B;
  if (s == "G3") return Pattern::G3;
  if (s == "G4") return Pattern::G4;
  if (s == "G5") return Pattern::G5;
  throw DataError("invalid Gleason pattern '" + std::string(s) + "'");
}

int gleason_value(Pattern p) {
  switch (p) {
    case Pattern::G3: return 3;
    case Pattern::G4: return 4;
    case Pattern::G5: return 5;
    case Pattern::B: break;
  }
  return 0;
}

int GleasonLabel::score() const {
  return benign() ? 0 : gleason_value(primary) + gleason_value(secondary);
}

std::string GleasonLabel::grade() const {
  if (benign()) return "B";
  return std::to_string(gleason_value(primary)) + "+" + std::to_string(gleason_value(secondary));
}

GleasonLabel make_label(Pattern primary, Pattern secondary) {
  if ((primary == Pattern::B) != (secondary == Pattern::B)) {
    throw DataError("inconsistent Gleason label " + std::string(to_string(primary)) + "/" +
                    std::string(to_string(secondary)) + ": benign must pair with benign");
  }
  return {primary, secondary};
}

int gleason_to_isup(const GleasonLabel& label) {
  if (label.benign()) return 0;
  const int score = label.score();
  if (score <= 6) return 1;
  if (score == 7) return label.primary == Pattern::G3 ? 2 : 3;
  if (score == 8) return 4;
  return 5;
}

DecodedLabel decode_label(Pattern primary_argmax, Pattern secondary_argmax) {
  if (primary_argmax == Pattern::B) {
    return {{Pattern::B, Pattern::B}, secondary_argmax != Pattern::B};
  }
  if (secondary_argmax == Pattern::B) {
    return {{primary_argmax, primary_argmax}, true};
  }
  return {{primary_argmax, secondary_argmax}, false};
}

}  // namespace tissueseg
