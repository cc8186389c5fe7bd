"""
求解器领域异常。每个异常携带一个 :class:`~gpcplast.models.ErrorCode`，
以便 CLI 与 JSON-RPC 层统一映射。
"""

from __future__ import annotations

from typing import Any, Optional

from gpcplast.models import ErrorCode


class GpcPlastError(Exception):
    """所有领域错误的基类。"""

    code: ErrorCode = ErrorCode.INTERNAL_ERROR

    def __init__(self, message: str, *, data: Optional[Any] = None) -> None:
        super().__init__(message)
        self.message = message
        self.data = data


class SingularMatrix(GpcPlastError):
    code = ErrorCode.SINGULAR_MATRIX


class NonFiniteEvaluation(GpcPlastError):
    code = ErrorCode.NON_FINITE_EVALUATION


class InvalidSelector(GpcPlastError):
    code = ErrorCode.INVALID_SELECTOR


class InvalidMesh(GpcPlastError):
    code = ErrorCode.INVALID_MESH


class DimensionMismatch(GpcPlastError):
    code = ErrorCode.DIMENSION_MISMATCH


class InfeasiblePoint(GpcPlastError):
    code = ErrorCode.INFEASIBLE_POINT


class LineSearchFailure(GpcPlastError):
    code = ErrorCode.LINE_SEARCH_FAILURE


class OutOfRange(GpcPlastError):
    code = ErrorCode.OUT_OF_RANGE


class DomainError(GpcPlastError):
    code = ErrorCode.DOMAIN_ERROR


class ConfigParseError(GpcPlastError):
    code = ErrorCode.CONFIG_PARSE


class ConfigValidationError(GpcPlastError):
    code = ErrorCode.CONFIG_VALIDATION


class ServiceUnavailable(GpcPlastError):
    code = ErrorCode.SERVICE_UNAVAILABLE
