# Trainable blocks: layers, hypercolumn, optimizer and checkpoint container
from crossnet.nn.module import Module, ModuleList, Parameter
from crossnet.nn.layers import BatchNorm, Conv2d, ConvBackbone, Linear, MLP
from crossnet.nn.hypercolumn import cell_centers, hypercolumn
from crossnet.nn.optim import Adam, clip_grad_norm
