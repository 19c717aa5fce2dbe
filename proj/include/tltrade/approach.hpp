#pragma once

#include <string_view>

namespace tlt {

// FE: frozen network + classifier on extracted features. FT: fine-tuning.
enum class Approach { FE, FT };

std::string_view to_string(Approach approach);
Approach parse_approach(std::string_view text);

}  // namespace tlt
