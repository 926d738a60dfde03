#pragma once

#include <string>

#include "histogen/corpus/manifest.hpp"

namespace histogen::corpus {

// Renders the score clause pair exactly as "Low tumour;" / "High tumour;"
// and "Low TIL;" / "High TIL;".
std::string tumor_clause(ScoreLabel v);
std::string til_clause(ScoreLabel v);

// caption = summary + " " + tumor clause + " " + TIL clause. Empty summary
// is an error.
std::string compose_caption(const std::string& summary, ScoreLabel tumor, ScoreLabel til);

}  // namespace histogen::corpus
