#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sidkit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The five body/semantic roles every schema must cover, in canonical order.
enum class GroupRole { kHead = 0, kUpperBody, kLowerBody, kIdentity, kCarrying };
inline constexpr int kNumGroups = 5;

const char* role_name(GroupRole role);
std::optional<GroupRole> role_from_name(const std::string& name);

enum class AttrKind { kBinary, kCategorical };

struct AttributeDef {
  std::string name;
  AttrKind kind = AttrKind::kBinary;
  std::vector<std::string> labels;  // ordered; order defines digit values

  int label_count() const { return static_cast<int>(labels.size()); }
  // width of this attribute's slice of the group's binary vector:
  // binary -> one coordinate holding the label index, categorical -> one-hot
  int vector_width() const {
    return kind == AttrKind::kBinary ? 1 : label_count();
  }
  // index of a label within this attribute, or throws
  int label_index(const std::string& label) const;
};

struct AttributeGroup {
  GroupRole role = GroupRole::kHead;
  std::vector<AttributeDef> attributes;  // order defines radix significance

  int attribute_count() const { return static_cast<int>(attributes.size()); }
  // number of distinct attribute combinations (SIDs) in this group
  long sid_count() const;
  // length of the expanded binary attribute vector
  int vector_length() const;
  const AttributeDef& attribute(const std::string& name) const;
};

// One attribute combination within a group. index and label_choice are two
// views of the same combination: index is the mixed-radix encoding of the
// per-attribute label indices, first attribute most significant.
struct SemanticId {
  GroupRole group = GroupRole::kHead;
  int index = 0;
  std::vector<int> label_choice;  // label index per attribute, group order

  bool operator==(const SemanticId& o) const {
    return group == o.group && index == o.index && label_choice == o.label_choice;
  }
};

class AttributeSchema {
 public:
  // Parses and validates a schema document (JSON text). Errors out on:
  // missing/duplicated roles, duplicate attribute names, < 2 labels,
  // duplicate labels, unknown kind, binary attributes without exactly
  // two labels.
  static AttributeSchema parse(const std::string& json_text);
  static AttributeSchema load(const std::string& path);

  const std::string& version() const { return version_; }
  const std::vector<AttributeGroup>& groups() const { return groups_; }
  const AttributeGroup& group(GroupRole role) const;

  // Stable content hash (FNV-1a over the canonical serialization); used to
  // pair serialized galleries/checkpoints with the schema they were built
  // against.
  uint64_t hash() const;
  std::string to_json() const;

  // total SID count across groups and per-group offsets, convenient for
  // flat prototype storage
  long total_sid_count() const;

 private:
  std::string version_;
  std::vector<AttributeGroup> groups_;  // document order; all five roles present
};

// All label combinations of the group in index order (0 .. sid_count-1).
// Includes combinations never observed in any dataset.
std::vector<SemanticId> enumerate_sids(const AttributeGroup& group);

// Combination -> SemanticId. `labels` must assign one known label to every
// attribute of the group.
SemanticId sid_of(const AttributeGroup& group,
                  const std::map<std::string, std::string>& labels);

// Decode an index back into a SemanticId (inverse of the mixed-radix encode).
SemanticId sid_from_index(const AttributeGroup& group, long index);

// Expanded binary vector for a SID: binary attributes contribute their digit,
// categorical attributes a one-hot block. Doubles so it can feed arithmetic
// directly; values are exactly 0.0 or 1.0.
std::vector<double> attribute_vector(const AttributeGroup& group, const SemanticId& sid);

}  // namespace sidkit
