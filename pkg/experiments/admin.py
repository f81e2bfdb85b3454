import json

from django.contrib import admin
from django.utils.html import format_html
from import_export import resources
from import_export.admin import ExportMixin
from rangefilter.filters import DateRangeFilter

from .models import ExperimentRun


class ExperimentRunResource(resources.ModelResource):
    class Meta:
        model = ExperimentRun
        fields = (
            'id', 'kind', 'status', 'seed', 'output_dir', 'row_count',
            'artifacts', 'summary', 'error', 'started_at', 'finished_at',
        )
        export_order = fields


@admin.register(ExperimentRun)
class ExperimentRunAdmin(ExportMixin, admin.ModelAdmin):
    resource_class = ExperimentRunResource
    list_display = ('id', 'kind', 'status', 'seed', 'row_count', 'started_at', 'duration_display')
    list_filter = (
        'kind',
        'status',
        ('started_at', DateRangeFilter),
    )
    search_fields = ('output_dir', 'error')
    date_hierarchy = 'started_at'
    readonly_fields = ('started_at', 'finished_at', 'config_formatted', 'summary_formatted')
    ordering = ('-started_at',)
    list_per_page = 50
    fieldsets = (
        (None, {
            'fields': ('kind', 'status', 'seed', 'output_dir', 'row_count')
        }),
        ('Details', {
            'fields': ('config_formatted', 'summary_formatted', 'artifacts', 'error'),
            'classes': ('collapse',)
        }),
        ('Timing', {
            'fields': ('started_at', 'finished_at'),
        }),
    )

    def duration_display(self, obj):
        duration = obj.duration
        return f"{duration.total_seconds():.1f}s" if duration is not None else '-'
    duration_display.short_description = 'Duration'

    def _formatted(self, value):
        if not value:
            return '-'
        return format_html('<pre>{}</pre>', json.dumps(value, indent=2, ensure_ascii=False))

    def config_formatted(self, obj):
        return self._formatted(obj.config)
    config_formatted.short_description = 'Config'

    def summary_formatted(self, obj):
        return self._formatted(obj.summary)
    summary_formatted.short_description = 'Summary'
