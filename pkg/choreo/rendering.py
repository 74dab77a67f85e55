"""
Rendu des mouvements en bonshommes fil de fer : un SVG par image (template
choreo/pose.svg) et un GIF animé via Pillow. Le cadrage est calculé une fois
pour toute la séquence.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from django.template.loader import render_to_string
from PIL import Image, ImageDraw

from .exceptions import DegeneratePoseError
from .skeleton import BODY_25, Motion

logger = logging.getLogger(__name__)

MARGIN = 0.1
BACKGROUND = '#ffffff'
STROKE = '#1f2d3d'
JOINT_FILL = '#d1495b'


@dataclass
class RenderResult:
    svg_paths: List[Path]
    gif_path: Optional[Path]


def _check_frames(motion: Motion):
    for t in range(len(motion)):
        present = motion.confidence[t] > 0
        points = motion.joints[t][present]
        if points.shape[0] < 2 or np.ptp(points, axis=0).max() <= 1e-12:
            raise DegeneratePoseError(f"degenerate pose à l'image {t} : rien à dessiner")


def frame_transform(motion: Motion, size: int):
    """Boîte englobante de toute la séquence -> carré de size pixels avec marge"""
    present = motion.confidence > 0
    points = motion.joints[present]
    low, high = points.min(axis=0), points.max(axis=0)
    extent = float(max((high - low).max(), 1e-12))
    scale = size * (1.0 - 2 * MARGIN) / extent
    offset = size / 2.0 - scale * (low + high) / 2.0

    def apply(joints: np.ndarray) -> np.ndarray:
        return joints * scale + offset

    return apply


def _bones(joints: np.ndarray, present: np.ndarray) -> list:
    return [
        (tuple(joints[a]), tuple(joints[b]))
        for a, b in BODY_25.edges
        if present[a] and present[b]
    ]


def render_svg_frame(joints: np.ndarray, present: np.ndarray, frame: int, size: int = 256) -> str:
    """joints déjà exprimés en pixels du canevas"""
    lines = [
        {'x1': f"{a[0]:.2f}", 'y1': f"{a[1]:.2f}", 'x2': f"{b[0]:.2f}", 'y2': f"{b[1]:.2f}"}
        for a, b in _bones(joints, present)
    ]
    points = [{'x': f"{x:.2f}", 'y': f"{y:.2f}"} for (x, y), ok in zip(joints, present) if ok]
    return render_to_string('choreo/pose.svg', {
        'size': size,
        'frame': frame,
        'lines': lines,
        'points': points,
        'background': BACKGROUND,
        'stroke': STROKE,
        'joint_fill': JOINT_FILL,
        'stroke_width': max(size // 128, 1),
        'radius': max(size // 96, 1),
    })


def _gif_frame(joints: np.ndarray, present: np.ndarray, size: int) -> Image.Image:
    image = Image.new('RGB', (size, size), BACKGROUND)
    draw = ImageDraw.Draw(image)
    for a, b in _bones(joints, present):
        draw.line([a, b], fill=STROKE, width=max(size // 128, 1))
    radius = max(size // 96, 1)
    for (x, y), ok in zip(joints, present):
        if ok:
            draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=JOINT_FILL)
    return image


def render_motion(motion: Motion, out_dir: Union[str, Path], size: int = 256, gif: bool = True) -> RenderResult:
    """Écrit frame_0000.svg ... et motion.gif dans out_dir"""
    _check_frames(motion)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    to_canvas = frame_transform(motion, size)

    svg_paths, images = [], []
    for t in range(len(motion)):
        joints = to_canvas(motion.joints[t])
        present = motion.confidence[t] > 0
        path = out_dir / f"frame_{t:04d}.svg"
        path.write_text(render_svg_frame(joints, present, t, size), encoding='utf-8')
        svg_paths.append(path)
        if gif:
            images.append(_gif_frame(joints, present, size))

    gif_path = None
    if gif and images:
        gif_path = out_dir / 'motion.gif'
        duration = int(round(1000.0 / motion.fps))
        images[0].save(gif_path, save_all=True, append_images=images[1:], duration=duration, loop=0)
    logger.info(f"Rendu de {len(svg_paths)} images dans {out_dir}")
    return RenderResult(svg_paths, gif_path)
