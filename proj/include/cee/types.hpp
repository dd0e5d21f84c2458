#pragma once

#include <string>
#include <string_view>

namespace cee {

enum class Link { identity, log };
enum class Family { gaussian, binomial };

Link parse_link(std::string_view text);
Family parse_family(std::string_view text);
std::string to_string(Link link);
std::string to_string(Family family);

}  // namespace cee
