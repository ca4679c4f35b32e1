#pragma once

namespace repmet::eval {

/// Axis-aligned box (x1, y1) – (x2, y2) with x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double area() const noexcept { return (x2 - x1) * (y2 - y1); }
  bool well_formed() const noexcept { return x2 > x1 && y2 > y1; }
  bool operator==(const Box&) const = default;
};

/// Intersection over union; throws InvalidArgument for a zero-area or
/// inverted box.
double iou(const Box& a, const Box& b);

}  // namespace repmet::eval
