#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace microseg {

/// Label ids. Background covers rest and the gaps between repetitions.
enum class Activity : int {
  background = 0,
  heels_up_down = 1,
  knees_flexion_extension = 2,
  trunk_flexion_extension = 3,
  sit_to_stand = 4,
  stand_to_sit = 5,
};

inline constexpr std::size_t kNumActivities = 6;
inline constexpr double kSampleRate = 100.0;

inline constexpr std::array<std::string_view, kNumActivities> kActivityNames = {
    "background",   "heels_up_down", "knees_flexion_extension",
    "trunk_flexion_extension", "sit_to_stand", "stand_to_sit"};

inline constexpr int id(Activity a) { return static_cast<int>(a); }

inline std::string activity_name(int class_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= kNumActivities)
    return "class_" + std::to_string(class_id);
  return std::string(kActivityNames[static_cast<std::size_t>(class_id)]);
}

inline bool is_chair_rising(int class_id) {
  return class_id == id(Activity::sit_to_stand) || class_id == id(Activity::stand_to_sit);
}

}  // namespace microseg
