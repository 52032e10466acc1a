#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "aod/geometry.hpp"

namespace aod {

struct VocObject {
  std::string class_name;
  bool difficult = false;
  BoundingBox box;  // center form; width = xmax - xmin + 1 (1-based inclusive corners)
};

struct VocAnnotation {
  std::string filename;
  int width = 0;
  int height = 0;
  std::vector<VocObject> objects;
};

namespace detail {

// Just enough XML for VOC annotation files: nested elements, text content,
// comments and a prolog. Attributes are parsed past and ignored.
struct XmlNode {
  std::string tag;
  std::string text;
  std::vector<XmlNode> children;

  const XmlNode* child(const std::string& name) const {
    for (const XmlNode& c : children) {
      if (c.tag == name) return &c;
    }
    return nullptr;
  }
};

class XmlParser {
 public:
  explicit XmlParser(const std::string& text) : s_(text) {}

  XmlNode parse_document() {
    skip_misc();
    XmlNode root = parse_element();
    skip_misc();
    if (pos_ != s_.size()) throw ParseError("voc xml: trailing content after root element");
    return root;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  void skip_misc() {
    while (true) {
      skip_ws();
      if (match("<?")) {
        const std::size_t end = s_.find("?>", pos_);
        if (end == std::string::npos) throw ParseError("voc xml: unterminated prolog");
        pos_ = end + 2;
      } else if (match("<!--")) {
        const std::size_t end = s_.find("-->", pos_);
        if (end == std::string::npos) throw ParseError("voc xml: unterminated comment");
        pos_ = end + 3;
      } else {
        return;
      }
    }
  }

  bool match(const char* prefix) {
    const std::size_t n = std::char_traits<char>::length(prefix);
    if (s_.compare(pos_, n, prefix) == 0) {
      pos_ += n;
      return true;
    }
    return false;
  }

  std::string parse_name() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
            s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == ':')) {
      ++pos_;
    }
    if (pos_ == start) throw ParseError("voc xml: expected element name");
    return s_.substr(start, pos_ - start);
  }

  XmlNode parse_element() {
    if (pos_ >= s_.size() || s_[pos_] != '<') throw ParseError("voc xml: expected '<'");
    ++pos_;
    XmlNode node;
    node.tag = parse_name();
    // attributes: skip to '>' or '/>'
    while (pos_ < s_.size() && s_[pos_] != '>' && !(s_[pos_] == '/' && pos_ + 1 < s_.size() &&
                                                    s_[pos_ + 1] == '>')) {
      if (s_[pos_] == '"' || s_[pos_] == '\'') {
        const char quote = s_[pos_++];
        while (pos_ < s_.size() && s_[pos_] != quote) ++pos_;
        if (pos_ >= s_.size()) throw ParseError("voc xml: unterminated attribute value");
      }
      ++pos_;
    }
    if (pos_ >= s_.size()) throw ParseError("voc xml: unterminated start tag <" + node.tag);
    if (s_[pos_] == '/') {
      pos_ += 2;  // self-closing
      return node;
    }
    ++pos_;  // '>'

    while (true) {
      // text up to the next tag
      const std::size_t lt = s_.find('<', pos_);
      if (lt == std::string::npos) throw ParseError("voc xml: missing </" + node.tag + ">");
      node.text += s_.substr(pos_, lt - pos_);
      pos_ = lt;
      if (match("<!--")) {
        const std::size_t end = s_.find("-->", pos_);
        if (end == std::string::npos) throw ParseError("voc xml: unterminated comment");
        pos_ = end + 3;
        continue;
      }
      if (s_.compare(pos_, 2, "</") == 0) {
        pos_ += 2;
        const std::string closing = parse_name();
        if (closing != node.tag) {
          throw ParseError("voc xml: mismatched </" + closing + ">, expected </" + node.tag +
                           ">");
        }
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != '>') {
          throw ParseError("voc xml: malformed close tag");
        }
        ++pos_;
        return node;
      }
      node.children.push_back(parse_element());
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

inline std::string trimmed(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline const XmlNode& require_child(const XmlNode& node, const std::string& name,
                                    const std::string& path) {
  const XmlNode* c = node.child(name);
  if (!c) throw ParseError("voc xml: missing element " + path);
  return *c;
}

inline int parse_int_text(const XmlNode& node, const std::string& path) {
  const std::string t = trimmed(node.text);
  if (t.empty()) throw ParseError("voc xml: empty integer at " + path);
  std::size_t consumed = 0;
  int value = 0;
  try {
    value = std::stoi(t, &consumed);
  } catch (const std::exception&) {
    throw ParseError("voc xml: non-integer value at " + path);
  }
  if (consumed != t.size()) throw ParseError("voc xml: non-integer value at " + path);
  return value;
}

}  // namespace detail

// Parses one PASCAL VOC annotation document. Corner coordinates follow the
// VOC convention of 1-based inclusive pixels, so width = xmax - xmin + 1.
inline VocAnnotation parse_voc_xml(const std::string& document) {
  detail::XmlParser parser(document);
  const detail::XmlNode root = parser.parse_document();
  if (root.tag != "annotation") throw ParseError("voc xml: missing element annotation");

  VocAnnotation ann;
  if (const detail::XmlNode* fn = root.child("filename")) ann.filename = detail::trimmed(fn->text);
  const detail::XmlNode& size = detail::require_child(root, "size", "annotation/size");
  ann.width = detail::parse_int_text(
      detail::require_child(size, "width", "annotation/size/width"), "annotation/size/width");
  ann.height = detail::parse_int_text(
      detail::require_child(size, "height", "annotation/size/height"),
      "annotation/size/height");

  for (const detail::XmlNode& child : root.children) {
    if (child.tag != "object") continue;
    VocObject obj;
    obj.class_name =
        detail::trimmed(detail::require_child(child, "name", "object/name").text);
    if (const detail::XmlNode* diff = child.child("difficult")) {
      obj.difficult = detail::parse_int_text(*diff, "object/difficult") != 0;
    }
    const detail::XmlNode& bb = detail::require_child(child, "bndbox", "object/bndbox");
    const int xmin = detail::parse_int_text(
        detail::require_child(bb, "xmin", "object/bndbox/xmin"), "object/bndbox/xmin");
    const int ymin = detail::parse_int_text(
        detail::require_child(bb, "ymin", "object/bndbox/ymin"), "object/bndbox/ymin");
    const int xmax = detail::parse_int_text(
        detail::require_child(bb, "xmax", "object/bndbox/xmax"), "object/bndbox/xmax");
    const int ymax = detail::parse_int_text(
        detail::require_child(bb, "ymax", "object/bndbox/ymax"), "object/bndbox/ymax");
    obj.box = BoundingBox{0.5 * (xmin + xmax), 0.5 * (ymin + ymax),
                          static_cast<double>(xmax - xmin + 1),
                          static_cast<double>(ymax - ymin + 1)};
    if (!obj.box.valid()) throw ParseError("voc xml: degenerate bndbox in object");
    ann.objects.push_back(std::move(obj));
  }
  return ann;
}

}  // namespace aod
