#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dictmlm/common.hpp"

namespace dictmlm {

// Dense language id, 0..L-1 within one LanguageRegistry.
struct LangId {
  std::uint16_t value = 0;

  friend bool operator==(LangId a, LangId b) { return a.value == b.value; }
  friend bool operator!=(LangId a, LangId b) { return a.value != b.value; }
  friend bool operator<(LangId a, LangId b) { return a.value < b.value; }
};

// Bijective code <-> id mapping. Ids are assigned densely in registration
// order.
class LanguageRegistry {
 public:
  LangId add(const std::string& code) {
    auto it = by_code_.find(code);
    if (it != by_code_.end()) return LangId{it->second};
    if (codes_.size() >= 0xffff) fail_data("language registry full");
    auto id = static_cast<std::uint16_t>(codes_.size());
    codes_.push_back(code);
    by_code_.emplace(code, id);
    return LangId{id};
  }

  LangId id_of(const std::string& code) const {
    auto it = by_code_.find(code);
    if (it == by_code_.end()) fail_data("unknown language code \"", code, "\"");
    return LangId{it->second};
  }

  bool has(const std::string& code) const { return by_code_.count(code) > 0; }

  const std::string& code_of(LangId id) const {
    if (id.value >= codes_.size()) {
      fail_data("language id ", id.value, " out of range (", codes_.size(), " registered)");
    }
    return codes_[id.value];
  }

  std::size_t size() const { return codes_.size(); }
  const std::vector<std::string>& codes() const { return codes_; }

 private:
  std::vector<std::string> codes_;
  std::unordered_map<std::string, std::uint16_t> by_code_;
};

}  // namespace dictmlm
