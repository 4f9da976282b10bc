#include "pen/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace pen {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex16(uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(x));
  return std::string(buf);
}

// Rounds the shortest fixed decimal representation of the value half-even at
// `places` digits. Plain printf would round the binary expansion instead
// (0.035 -> "0.03"), which is not what table readers expect.
std::string format_decimal(double value, int places) {
  if (!std::isfinite(value)) return "nan";
  bool negative = std::signbit(value);
  double mag = std::fabs(value);
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), mag,
                           std::chars_format::fixed);
  std::string s(buf, res.ptr);

  std::string digits;
  int point = -1;
  for (char ch : s) {
    if (ch == '.') point = static_cast<int>(digits.size());
    else digits.push_back(ch);
  }
  if (point < 0) point = static_cast<int>(digits.size());

  // Number of fractional digits present vs requested.
  int frac = static_cast<int>(digits.size()) - point;
  if (frac <= places) {
    digits.append(places - frac, '0');
  } else {
    int keep = point + places;
    char next = digits[keep];
    bool sticky = false;
    for (size_t i = keep + 1; i < digits.size(); ++i)
      sticky = sticky || digits[i] != '0';
    digits.resize(keep);
    bool round_up = next > '5' || (next == '5' && sticky);
    if (next == '5' && !sticky) {
      char last = keep > 0 ? digits[keep - 1] : '0';
      round_up = ((last - '0') % 2) != 0;  // half to even
    }
    if (round_up) {
      int i = keep - 1;
      while (i >= 0) {
        if (digits[i] != '9') {
          digits[i] += 1;
          break;
        }
        digits[i] = '0';
        --i;
      }
      if (i < 0) {
        digits.insert(digits.begin(), '1');
        point += 1;
      }
    }
  }

  std::string out;
  if (negative) out.push_back('-');
  out.append(point > 0 ? digits.substr(0, point) : "0");
  if (places > 0) {
    out.push_back('.');
    out.append(digits.substr(point));
  }
  // -0.0000 reads as noise
  if (out.find_first_of("123456789") == std::string::npos &&
      !out.empty() && out[0] == '-')
    out.erase(out.begin());
  return out;
}

}  // namespace pen
