#pragma once

#include <string_view>

// Contents of the files under data/, compiled in so the library has no
// runtime path dependency. CLI flags can still point at edited copies.
namespace repare::embedded {

std::string_view smart_stoplist();
std::string_view prompt_registry();
std::string_view fusion_exemplars();
std::string_view number_words();

}  // namespace repare::embedded
