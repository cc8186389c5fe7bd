"""梯度多凸有限应变弹塑性的增量能量极小化求解器。"""

__version__ = "0.1.0"
