"""Color constants shared by the sprite renderer and the toy segmenter.

Sprite colors are saturated and keep a euclidean RGB distance well above
the segmentation threshold from every background, from the white removal
fill, and from their own texture shades.
"""

SPRITE_RGB = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.15),
    "blue": (0.12, 0.20, 0.85),
    "yellow": (0.95, 0.85, 0.05),
    "purple": (0.60, 0.10, 0.70),
    "cyan": (0.05, 0.75, 0.80),
}

# Texture accents lighten toward white so they stay far from the dark
# backgrounds; the fractions differ so stripe and dot sprites remain
# distinguishable by histogram.  Both keep every accent > 0.29 away from
# every background color and from the white fill (threshold is 0.25).
STRIPE_LIGHTEN = 0.35
DOT_LIGHTEN = 0.25

WHITE_FILL = 1.0

BACKGROUNDS = {
    "backdrop": {"kind": "flat", "color": (0.15, 0.15, 0.18)},
    "floor": {"kind": "checker", "colors": ((0.22, 0.22, 0.25), (0.32, 0.32, 0.35)), "cell": 8},
    "sky": {"kind": "gradient", "top": (0.08, 0.10, 0.20), "bottom": (0.14, 0.17, 0.30)},
    "night": {"kind": "stars", "color": (0.05, 0.05, 0.12), "star": (0.90, 0.90, 1.00), "count": 6},
    "wall": {"kind": "brick", "brick": (0.35, 0.18, 0.12), "mortar": (0.45, 0.28, 0.22)},
    "beach": {"kind": "speckle", "color": (0.76, 0.70, 0.52), "amplitude": 0.03},
}


def lighten(rgb, amount):
    return tuple(c + amount * (1.0 - c) for c in rgb)
