"""
URL configuration: the admin is the only HTTP surface; experiment runs are browsed,
filtered and exported there.
"""

from django.contrib import admin
from django.urls import path

admin.site.site_header = 'IFM lab'
admin.site.site_title = 'IFM lab'
admin.site.index_title = 'Experiment runs'

urlpatterns = [
    path('admin/', admin.site.urls),
]
