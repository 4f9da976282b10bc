#include "pen/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pen/common.hpp"

namespace pen::io {

data::Image read_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw InputError("unreadable image: " + path.string());
  double scale = 1.0;
  switch (m.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: scale = 1.0; break;
    default: throw InputError("unsupported image depth: " + path.string());
  }
  cv::Mat f;
  m.convertTo(f, CV_32F, scale);
  data::Image img(f.rows, f.cols);
  const int ch = f.channels();
  for (int r = 0; r < f.rows; ++r) {
    const float* row = f.ptr<float>(r);
    for (int c = 0; c < f.cols; ++c) {
      float rr, gg, bb;
      if (ch == 1) {
        rr = gg = bb = row[c];
      } else {
        // OpenCV loads BGR(A)
        bb = row[c * ch + 0];
        gg = row[c * ch + 1];
        rr = row[c * ch + 2];
      }
      img.at(0, r, c) = rr;
      img.at(1, r, c) = gg;
      img.at(2, r, c) = bb;
    }
  }
  return img;
}

annotation::InstanceMask read_mask_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw InputError("unreadable mask: " + path.string());
  if (m.channels() != 1)
    throw InputError("instance mask must be single-channel: " + path.string());
  annotation::InstanceMask mask(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      int32_t v = 0;
      if (m.depth() == CV_16U) v = m.at<uint16_t>(r, c);
      else if (m.depth() == CV_8U) v = m.at<uint8_t>(r, c);
      else if (m.depth() == CV_32S) v = m.at<int32_t>(r, c);
      else throw InputError("unsupported mask depth: " + path.string());
      mask.at(r, c) = v;
    }
  }
  return mask;
}

void write_image_png(const std::filesystem::path& path,
                     const data::Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r) {
    uint8_t* row = m.ptr<uint8_t>(r);
    for (int c = 0; c < img.width; ++c) {
      auto q = [](float v) {
        int x = static_cast<int>(v * 255.0f + 0.5f);
        return static_cast<uint8_t>(std::clamp(x, 0, 255));
      };
      row[c * 3 + 0] = q(img.at(2, r, c));  // BGR
      row[c * 3 + 1] = q(img.at(1, r, c));
      row[c * 3 + 2] = q(img.at(0, r, c));
    }
  }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m))
    throw std::runtime_error("failed to write " + path.string());
}

void write_mask_png16(const std::filesystem::path& path,
                      const annotation::InstanceMask& mask) {
  cv::Mat m(mask.height, mask.width, CV_16UC1);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      int32_t v = mask.at(r, c);
      if (v < 0 || v > 65535)
        throw InputError("instance id out of 16-bit range: " +
                         std::to_string(v));
      m.at<uint16_t>(r, c) = static_cast<uint16_t>(v);
    }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m))
    throw std::runtime_error("failed to write " + path.string());
}

void write_rgb_png(const std::filesystem::path& path, int height, int width,
                   const std::vector<uint8_t>& rgb) {
  cv::Mat m(height, width, CV_8UC3);
  for (int r = 0; r < height; ++r) {
    uint8_t* row = m.ptr<uint8_t>(r);
    for (int c = 0; c < width; ++c) {
      size_t i = (static_cast<size_t>(r) * width + c) * 3;
      row[c * 3 + 0] = rgb[i + 2];
      row[c * 3 + 1] = rgb[i + 1];
      row[c * 3 + 2] = rgb[i + 0];
    }
  }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m))
    throw std::runtime_error("failed to write " + path.string());
}

}  // namespace pen::io
